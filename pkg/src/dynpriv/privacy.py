"""Adversary information sets, the sole-neighbor attack and indistinguishable executions.

Record keys use 1-based node labels and are canonical, so the same quantity
seen by two colluding nodes collapses to one entry:

* ``x[p]``, ``ly[p]``: step-a broadcast of node ``p`` (own state or received);
* ``y[j]``, ``grad[j]``: own tracker and gradient;
* ``msg[i<-j]``: tracker-update term on pair ``(i, j)``; ``msg[j<-j]`` is ``j``'s own term;
* ``lam[p]``, ``R[i,j]``, ``A[i,j]``, ``C[i,j]``, ``B[i,j]``: weight parameters.

Private-phase parameters are included only for their owner; stochastic-phase
parameters are public.
"""

from __future__ import annotations

import csv
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dynpriv.engine import ExecutionTrace, run
from dynpriv.errors import (
    DenominatorNearZero,
    MissingSidecar,
    NoCounterpart,
    NotConvergedWarning,
    StructureMismatch,
    TopologyMismatch,
)
from dynpriv.graph import DirectedGraph
from dynpriv.objectives import ObjectiveSuite, shifted_suite
from dynpriv.persist import fmt
from dynpriv.weights import ExplicitSchedule, IterationParameters

__all__ = [
    "Record",
    "InformationSet",
    "GradientShift",
    "AttackResult",
    "AlternativeExecution",
    "collect_information",
    "attack_sole_neighbor",
    "construct_indistinguishable",
    "verify_indistinguishability",
    "difference_by_iteration",
    "state_agreement",
    "write_information_pairs",
]


@dataclass(frozen=True, eq=False)
class Record:
    ks: np.ndarray  # iteration indices, increasing
    values: np.ndarray  # (len(ks), d)

    def at(self, k: int) -> np.ndarray:
        idx = int(np.searchsorted(self.ks, k))
        if idx >= self.ks.size or self.ks[idx] != k:
            raise KeyError(k)
        return self.values[idx]


def _merge(a: Record, b: Record) -> Record:
    ks = np.union1d(a.ks, b.ks)
    values = np.empty((ks.size, a.values.shape[1]))
    values[np.searchsorted(ks, b.ks)] = b.values
    values[np.searchsorted(ks, a.ks)] = a.values
    return Record(ks, values)


@dataclass(eq=False)
class InformationSet:
    """Everything a node (or a colluding set) observes during one execution."""

    owners: frozenset[int]
    graph: DirectedGraph
    T: int
    K: int
    records: dict[str, Record] = field(default_factory=dict)

    def keys(self) -> set[str]:
        return set(self.records)

    def entries(self) -> set[tuple[str, int]]:
        return {(key, int(k)) for key, rec in self.records.items() for k in rec.ks}

    def get(self, key: str, k: int) -> np.ndarray:
        return self.records[key].at(k)

    def add(self, key: str, ks: np.ndarray, values: np.ndarray) -> None:
        rec = Record(np.asarray(ks, dtype=np.int64), np.asarray(values, dtype=float).reshape(len(ks), -1))
        if rec.ks.size == 0:
            return
        self.records[key] = _merge(self.records[key], rec) if key in self.records else rec

    def union(self, other: InformationSet) -> InformationSet:
        if other.graph is not self.graph and other.graph.digest() != self.graph.digest():
            raise StructureMismatch("information sets come from different graphs")
        out = InformationSet(self.owners | other.owners, self.graph, self.T, self.K, dict(self.records))
        for key, rec in other.records.items():
            out.add(key, rec.ks, rec.values)
        return out

    def issuperset(self, other: InformationSet) -> bool:
        return self.entries() >= other.entries()


def _pair_key(family: str, i: int, j: int) -> str:
    return f"{family}[{i + 1},{j + 1}]"


def collect_information(trace: ExecutionTrace, owners: int | Iterable[int]) -> InformationSet:
    """Build the information set of node ``owners`` (0-based) or of a colluding set.

    Raises:
        MissingSidecar: the trace lacks parameters and messages.
    """
    if not trace.has_sidecar:
        raise MissingSidecar("collecting an information set needs the trace sidecar")
    owner_set = frozenset([owners] if isinstance(owners, (int, np.integer)) else owners)
    graph = trace.graph
    T, K = trace.T, trace.K
    info = InformationSet(frozenset(), graph, T, K)
    every = np.arange(T + 1)
    steps = np.arange(T)
    private = np.arange(min(K, T))
    public = np.arange(min(K, T), T)

    for j in sorted(owner_set):
        info.add(f"x[{j + 1}]", every, trace.x[:, j])
        info.add(f"y[{j + 1}]", every, trace.y[:, j])
        info.add(f"grad[{j + 1}]", every, trace.grad[:, j])
        info.add(f"ly[{j + 1}]", steps, trace.ly[:, j])
        for l in graph.in_neighbors(j):
            info.add(f"x[{l + 1}]", steps, trace.x[:T, l])
            info.add(f"ly[{l + 1}]", steps, trace.ly[:, l])
        for p in (*graph.row_pairs(j), *graph.column_pairs(j)):
            r, s = graph.pairs[p]
            info.add(f"msg[{r + 1}<-{s + 1}]", steps, trace.tracker[:, p])

        if private.size:
            info.add(f"lam[{j + 1}]", private, np.stack([trace.params[k].lam[j] for k in private]))
            for fam, pairs in (("R", graph.row_pairs(j)), ("A", graph.row_pairs(j)),
                               ("C", graph.column_pairs(j)), ("B", graph.column_pairs(j))):
                for p in pairs:
                    r, s = graph.pairs[p]
                    vals = np.stack([trace.params[k].family(fam)[p] for k in private])
                    info.add(_pair_key(fam, r, s), private, vals)

    if public.size:
        for p in range(graph.n):
            info.add(f"lam[{p + 1}]", public, np.stack([trace.params[k].lam[p] for k in public]))
        for fam in ("R", "A", "C", "B"):
            stacked = np.stack([trace.params[k].family(fam) for k in public])
            for p, (r, s) in enumerate(graph.pairs):
                info.add(_pair_key(fam, r, s), public, stacked[:, p])
    info.owners = owner_set
    return info


def verify_indistinguishability(I: InformationSet, J: InformationSet) -> float:
    """Largest absolute difference over aligned entries of two information sets.

    Raises:
        StructureMismatch: different owners, horizon, graph or record layout.
    """
    if I.owners != J.owners or I.T != J.T or I.graph.digest() != J.graph.digest():
        raise StructureMismatch("owners, horizon or graph differ")
    if I.keys() != J.keys():
        diff = sorted(I.keys() ^ J.keys())
        raise StructureMismatch(f"record keys differ: {diff[:5]}")
    worst = 0.0
    for key, a in I.records.items():
        b = J.records[key]
        if not np.array_equal(a.ks, b.ks) or a.values.shape != b.values.shape:
            raise StructureMismatch(f"record {key} has a different shape")
        if a.values.size:
            worst = max(worst, float(np.max(np.abs(a.values - b.values))))
    return worst


def difference_by_iteration(I: InformationSet, J: InformationSet) -> dict[int, float]:
    """Per-iteration maximum absolute difference (same preconditions as verification)."""
    verify_indistinguishability(I, J)
    out: dict[int, float] = {}
    for key, a in I.records.items():
        delta = np.max(np.abs(a.values - J.records[key].values), axis=1)
        for k, v in zip(a.ks, delta):
            out[int(k)] = max(out.get(int(k), 0.0), float(v))
    return dict(sorted(out.items()))


def write_information_pairs(I: InformationSet, J: InformationSet, path: str | Path) -> Path:
    """CSV ``k,field,value_original,value_alternative`` with one row per scalar entry."""
    verify_indistinguishability(I, J)
    rows = []
    for key in sorted(I.records):
        a, b = I.records[key], J.records[key]
        d = a.values.shape[1]
        for idx, k in enumerate(a.ks):
            for l in range(d):
                name = key if d == 1 else f"{key}/{l}"
                rows.append((int(k), name, a.values[idx, l], b.values[idx, l]))
    rows.sort(key=lambda r: (r[0], r[1]))
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "field", "value_original", "value_alternative"])
        for k, name, va, vb in rows:
            w.writerow([k, name, fmt(va), fmt(vb)])
    return path


# --- sole-neighbor attack ----------------------------------------------------


@dataclass(frozen=True)
class AttackResult:
    target: int
    adversary: int
    estimate: np.ndarray
    residual_proxy: float  # ‖y_i^{T-1}‖ recovered from the public stepsize
    converged: bool


def attack_sole_neighbor(info: InformationSet, target: int, tol: float = 1e-8) -> AttackResult:
    """Estimate ``∇f_target(x*)`` when the adversary is the target's only neighbor.

    Uses ``m^k = −msg[j<-i]^k + msg[i<-j]^k`` (a received message and the
    adversary's own sent term) and returns ``−Σ_k m^k``, which equals
    ``∇f_i^T − y_i^T``. The tracker ``y_i^{T−1}`` is recovered from the
    broadcast ``Λ_i y_i`` and the public stochastic-phase stepsize and serves
    as the convergence proxy.

    Raises:
        TopologyMismatch: the information set is not a single node's, or the
            target has a neighbor other than the adversary.
    """
    if len(info.owners) != 1:
        raise TopologyMismatch("the attack is defined for a single adversary")
    (j,) = info.owners
    i = target
    g = info.graph
    if i == j or set(g.in_neighbors(i)) != {j} or set(g.out_neighbors(i)) != {j}:
        raise TopologyMismatch(
            f"node {j + 1} is not the only in- and out-neighbor of node {i + 1}"
        )
    received = info.records[f"msg[{j + 1}<-{i + 1}]"]
    sent = info.records[f"msg[{i + 1}<-{j + 1}]"]
    m = -received.values + sent.values
    estimate = -m.sum(axis=0)

    proxy = float("inf")
    last = info.T - 1
    if last >= info.K:
        ly = info.get(f"ly[{i + 1}]", last)
        lam = info.get(f"lam[{i + 1}]", last)
        proxy = float(np.linalg.norm(ly / lam))
    converged = proxy <= tol
    if not converged:
        warnings.warn(
            f"target tracker estimate {proxy:.3e} exceeds {tol:.1e}; the gradient estimate is biased",
            NotConvergedWarning,
            stacklevel=2,
        )
    return AttackResult(i, j, estimate, proxy, converged)


# --- indistinguishable executions --------------------------------------------


@dataclass(frozen=True)
class GradientShift:
    delta: np.ndarray
    target: int
    counterpart: int | None = None


@dataclass(eq=False)
class AlternativeExecution:
    trace: ExecutionTrace
    suite: ObjectiveSuite
    params0: IterationParameters
    counterpart: int
    case: str  # "out" when the counterpart receives from the target, "in" otherwise


def _choose_counterpart(graph: DirectedGraph, i: int, adversaries: frozenset[int], m: int | None) -> tuple[int, str]:
    outs = [p for p in graph.out_neighbors(i) if p not in adversaries]
    ins = [p for p in graph.in_neighbors(i) if p not in adversaries]
    if m is None:
        if outs:
            return outs[0], "out"
        if ins:
            return ins[0], "in"
        raise NoCounterpart(
            f"every neighbor of node {i + 1} is an adversary; its gradient is not protected"
        )
    if m in outs:
        return m, "out"
    if m in ins:
        return m, "in"
    raise NoCounterpart(f"node {m + 1} is not a non-adversary neighbor of node {i + 1}")


def _scale_column(C: np.ndarray, cols: np.ndarray, factor: np.ndarray) -> None:
    C[cols] = C[cols] * factor


def construct_indistinguishable(
    trace: ExecutionTrace,
    shift: GradientShift,
    adversaries: int | Iterable[int],
    suite: ObjectiveSuite | None = None,
) -> AlternativeExecution:
    """Replay the execution under ``∇f̃_i = ∇f_i + δ`` and ``∇f̃_m = ∇f_m − δ``.

    Only the ``k = 0`` stepsizes of ``i`` and ``m`` and the ``k = 0`` columns
    ``i`` and ``m`` of ``C`` change; everything else is copied. The adversaries'
    information set is unchanged and every node has identical ``x^1, y^1``.

    Raises:
        NoCounterpart: all neighbors of the target are adversaries.
        DenominatorNearZero: a shifted initial tracker coordinate is too close to 0.
        MissingSidecar: the trace lacks parameters.
    """
    suite = suite if suite is not None else trace.suite
    if suite is None or not trace.has_sidecar:
        raise MissingSidecar("the construction needs the objective suite and the trace sidecar")
    if trace.K < 1:
        raise ValueError("the construction needs at least one private iteration (K >= 1)")
    adv = frozenset([adversaries] if isinstance(adversaries, (int, np.integer)) else adversaries)
    graph = trace.graph
    i = shift.target
    if i in adv:
        raise ValueError(f"target node {i + 1} is itself an adversary")
    m, case = _choose_counterpart(graph, i, adv, shift.counterpart)
    delta = np.asarray(shift.delta, dtype=float).reshape(trace.d)

    y_i, y_m = trace.y[0, i], trace.y[0, m]
    eps = 1e-6 * (1.0 + float(np.max(np.abs(trace.y[0]))))
    for node, shifted in ((i, y_i + delta), (m, y_m - delta)):
        bad = np.flatnonzero(np.abs(shifted) < eps)
        if bad.size:
            raise DenominatorNearZero(node, int(bad[0]), float(shifted[bad[0]]))

    p0 = trace.params[0].copy()
    f_i = y_i / (y_i + delta)
    f_m = y_m / (y_m - delta)
    p0.lam[i] = p0.lam[i] * f_i
    p0.lam[m] = p0.lam[m] * f_m

    # column i carries +δ into the receiving entry, column m carries −δ out of it
    into = graph.pair_index(m, i) if case == "out" else graph.self_pair(i)
    outof = graph.self_pair(m) if case == "out" else graph.pair_index(i, m)
    C = p0.C
    col_i = graph.column_pairs(i)
    col_m = graph.column_pairs(m)
    c_into = C[into].copy()
    c_outof = C[outof].copy()
    _scale_column(C, col_i, f_i)
    _scale_column(C, col_m, f_m)
    C[into] = (c_into * y_i + delta) / (y_i + delta)
    C[outof] = (c_outof * y_m - delta) / (y_m - delta)

    alt_params = [p0, *trace.params[1:]]
    alt_suite = shifted_suite(suite, i, m, delta)
    alt = run(
        alt_suite,
        graph,
        ExplicitSchedule(alt_params, K=trace.K),
        trace.T,
        x0=trace.x[0],
        meta={**trace.meta, "alternative": {"target": i + 1, "counterpart": m + 1, "delta": delta.tolist()}},
    )
    alt.K = trace.K
    return AlternativeExecution(alt, alt_suite, p0, m, case)


def state_agreement(trace: ExecutionTrace, alternative: ExecutionTrace, k: int = 1) -> float:
    """``max(‖x̃^k − x^k‖_∞, ‖ỹ^k − y^k‖_∞)`` over all nodes."""
    return float(max(np.max(np.abs(trace.x[k] - alternative.x[k])), np.max(np.abs(trace.y[k] - alternative.y[k]))))
