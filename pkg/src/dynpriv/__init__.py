"""Gradient-tracking optimization over directed graphs with built-in gradient privacy.

Nodes run a two-phase protocol: for the first ``K`` iterations every weight and
stepsize is an arbitrary private real, afterwards weights are randomized on
stochastic simplices. The package simulates the protocol, records replayable
traces, constructs indistinguishable executions, runs the sole-neighbor
inference attack and evaluates the convergence certificate.
"""

from dynpriv.analysis import (
    build_M,
    certified_stepsize,
    conservation_series,
    diagnostics,
    eigen_derivative,
    fit_linear_rate,
    lemma_checks,
    lemma_constants,
)
from dynpriv.engine import (
    ExecutionTrace,
    default_weights,
    extra_equivalence_check,
    instantiate_preset,
    replay,
    run,
    step,
)
from dynpriv.graph import DirectedGraph, build_graph, cycle3, fig1b, parse_arrows, ring_graph
from dynpriv.objectives import ObjectiveSuite, estimation_suite, random_estimation_suite, rendezvous_suite
from dynpriv.privacy import (
    GradientShift,
    attack_sole_neighbor,
    collect_information,
    construct_indistinguishable,
    verify_indistinguishability,
)
from dynpriv.weights import Distribution, ScheduleConfig, TableIISchedule, validate

__version__ = "0.1.0"

__all__ = [
    "DirectedGraph",
    "build_graph",
    "ring_graph",
    "parse_arrows",
    "cycle3",
    "fig1b",
    "ObjectiveSuite",
    "rendezvous_suite",
    "estimation_suite",
    "random_estimation_suite",
    "Distribution",
    "ScheduleConfig",
    "TableIISchedule",
    "validate",
    "ExecutionTrace",
    "run",
    "step",
    "replay",
    "instantiate_preset",
    "default_weights",
    "extra_equivalence_check",
    "GradientShift",
    "collect_information",
    "construct_indistinguishable",
    "verify_indistinguishability",
    "attack_sole_neighbor",
    "lemma_constants",
    "build_M",
    "eigen_derivative",
    "certified_stepsize",
    "fit_linear_rate",
    "conservation_series",
    "diagnostics",
    "lemma_checks",
]
