"""Command-line experiment runner.

Subcommands: ``run``, ``attack``, ``replay``, ``analyze``, ``compare`` and
``presets list``. ``--config`` takes a YAML path or a built-in experiment name.
Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 privacy
precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from dynpriv.analysis import (
    absolute_probability_v,
    build_M,
    certified_stepsize,
    conservation_series,
    diagnostics,
    eigen_derivative,
    first_below,
    fit_linear_rate,
    lemma_checks,
    lemma_constants,
)
from dynpriv.config import EXPERIMENT_PRESETS, ExperimentConfig, config_from_dict, load_config
from dynpriv.engine import PRESETS, ExecutionTrace, instantiate_preset, run
from dynpriv.errors import (
    BufferTooShort,
    ConfigError,
    DenominatorNearZero,
    DimensionTooLarge,
    DynPrivError,
    MissingSidecar,
    NoCounterpart,
    NonFiniteState,
    NonPositiveError,
    NotConvergedWarning,
    SeriesTooShort,
    StochasticityViolation,
    StructureMismatch,
    TopologyMismatch,
)
from dynpriv.persist import fmt, load_trace, save_sidecar, write_error_csv, write_metadata, write_trace_csv
from dynpriv.privacy import (
    GradientShift,
    attack_sole_neighbor,
    collect_information,
    construct_indistinguishable,
    state_agreement,
    verify_indistinguishability,
    write_information_pairs,
)
from dynpriv.weights import TableIISchedule

__all__ = ["main", "execute", "compare_presets", "run_experiment", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_PRIVACY"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PRIVACY = 0, 2, 3, 4
TABLE_II = "TableII"
SVG_SALT = "dynpriv"

_PRIVACY_ERRORS = (NoCounterpart, DenominatorNearZero, TopologyMismatch, MissingSidecar, StructureMismatch)
_NUMERIC_ERRORS = (NonFiniteState, BufferTooShort, DimensionTooLarge, SeriesTooShort, NonPositiveError, ArithmeticError)
_CONFIG_ERRORS = (ConfigError, StochasticityViolation)


class _Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *parts) -> None:
        if not self.quiet:
            print(*parts)


# --- execution --------------------------------------------------------------------------


def make_schedule(name: str, cfg: ExperimentConfig, graph, d: int):
    """``TableII`` or a fixed-weight algorithm preset with the config's stepsize."""
    if name == TABLE_II:
        return TableIISchedule(graph, d, cfg.schedule)
    if name not in PRESETS:
        raise ConfigError(f"compare: unknown algorithm {name!r}; choose from {[TABLE_II, *sorted(PRESETS)]}")
    return instantiate_preset(name, graph, d, lam=cfg.schedule.lam)


def execute(cfg: ExperimentConfig, algorithm: str = TABLE_II, *, sidecar: bool | None = None) -> ExecutionTrace:
    """Run one configured experiment; the full config is echoed into the trace metadata."""
    graph, suite = cfg.graph.build(), cfg.suite.build()
    schedule = make_schedule(algorithm, cfg, graph, suite.dim)
    keep = cfg.outputs.keep_states
    meta = {
        "config": cfg.to_dict(),
        "algorithm": algorithm,
        "suite": {"kind": suite.kind, "alpha_F": suite.alpha_F, "beta_bar": suite.beta_bar, "beta_F": suite.beta_F},
    }
    return run(
        suite,
        graph,
        schedule,
        cfg.T,
        rng=cfg.init_seed,
        init_box=cfg.init_box,
        sidecar=cfg.outputs.sidecar if sidecar is None else sidecar,
        keep_states=keep,
        meta=meta,
    )


def rerun_from_metadata(meta: dict) -> ExecutionTrace:
    """Re-execute the run described by a trace's embedded config."""
    return execute(config_from_dict(meta["config"]), meta.get("algorithm", TABLE_II))


def plot_errors(series: dict[str, np.ndarray], path: Path, title: str) -> Path:
    """Static log-scale SVG of error series; byte-stable for identical input."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, err in series.items():
            e = np.asarray(err, dtype=float)
            ks = np.arange(e.size)
            ok = e > 0
            ax.semilogy(ks[ok], e[ok], label=label, linewidth=1.2)
        ax.set_xlabel("iteration k")
        ax.set_ylabel("‖x^k − 1⊗x*‖")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def _summary(trace: ExecutionTrace) -> dict:
    out: dict = {"T": trace.T, "K": trace.K}
    if trace.err is None:
        return out
    err = trace.err
    out["final_error"] = float(err[-1])
    hit = first_below(err, 1e-10)
    out["first_below_1e-10"] = hit
    stop = hit if hit is not None else trace.T
    try:
        fit = fit_linear_rate(err, burn_in=trace.K + 1, stop=stop)
        out["rate"] = fit.rate
        out["goodness"] = fit.goodness
    except (SeriesTooShort, NonPositiveError) as exc:
        out["rate_note"] = str(exc)
    return out


def write_artifacts(trace: ExecutionTrace, cfg: ExperimentConfig, out: Path, prefix: str = "") -> list[Path]:
    """CSV, metadata, optional sidecar and optional SVG for one trace."""
    out.mkdir(parents=True, exist_ok=True)
    o = cfg.outputs
    paths = [write_metadata(trace, out / f"{prefix}{o.metadata}")]
    if trace.err is not None:
        paths.append(write_error_csv(trace.err, out / f"{prefix}{o.error_csv}"))
    if o.trace_csv and trace.states_kept:
        paths.append(write_trace_csv(trace, out / f"{prefix}{o.trace_csv}"))
    if o.sidecar and trace.has_sidecar:
        paths.append(save_sidecar(trace, out / f"{prefix}trace.npz"))
    if o.svg and trace.err is not None:
        paths.append(plot_errors({cfg.name: trace.err}, out / f"{prefix}{o.svg}", f"{cfg.name}: optimization error"))
    return paths


def run_experiment(cfg: ExperimentConfig, out: Path, log=print) -> ExecutionTrace:
    trace = execute(cfg)
    write_artifacts(trace, cfg, out)
    summary = _summary(trace)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log(f"{cfg.name}: n={trace.n} d={trace.d} T={trace.T} K={trace.K}")
    for key, value in summary.items():
        log(f"  {key}: {value}")
    return trace


def compare_presets(cfg: ExperimentConfig, names: Sequence[str], out: Path) -> dict[str, np.ndarray]:
    """Error series of several algorithms from the same suite and initial state.

    Raises:
        StochasticityViolation: naming the offending preset and matrix.
    """
    series: dict[str, np.ndarray] = {}
    for name in names:
        try:
            trace = execute(cfg, name, sidecar=False)
        except StochasticityViolation as exc:
            raise StochasticityViolation(exc.matrix, f"preset {name}: {exc}") from exc
        if trace.err is None:
            raise ConfigError("compare: the suite has no known optimum")
        series[name] = trace.err
    out.mkdir(parents=True, exist_ok=True)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", *series])
        for k in range(cfg.T + 1):
            w.writerow([k, *(fmt(e[k]) for e in series.values())])
    if cfg.outputs.svg:
        plot_errors(series, out / "compare.svg", f"{cfg.name}: algorithm comparison")
    return series


# --- subcommands -----------------------------------------------------------------------------


def _cmd_run(cfg: ExperimentConfig, args, log) -> int:
    run_experiment(cfg, args.out, log)
    return EXIT_OK


def _cmd_compare(cfg: ExperimentConfig, args, log) -> int:
    names = args.algorithms or cfg.compare
    series = compare_presets(cfg, names, args.out)
    for name, err in series.items():
        log(f"{name}: final error {err[-1]:.3e}")
    return EXIT_OK


def _cmd_replay(cfg: ExperimentConfig, args, log) -> int:
    if cfg.schedule.K < 1:
        raise ConfigError("schedule.K: replay needs at least one private iteration")
    p = cfg.privacy
    trace = execute(cfg, sidecar=True)
    adversaries = [a - 1 for a in p.adversaries]
    delta = np.atleast_1d(np.asarray(p.delta, dtype=float))
    if delta.size == 1 and trace.d > 1:
        delta = np.full(trace.d, float(delta[0]))
    if delta.size != trace.d:
        raise ConfigError(f"privacy.delta: expected {trace.d} components, got {delta.size}")
    shift = GradientShift(delta, p.target - 1, None if p.counterpart is None else p.counterpart - 1)
    alt = construct_indistinguishable(trace, shift, adversaries)
    info = collect_information(trace, adversaries)
    info_alt = collect_information(alt.trace, adversaries)
    diff = verify_indistinguishability(info, info_alt)
    agree = state_agreement(trace, alt.trace, 1)

    out = args.out
    write_artifacts(trace, cfg, out, prefix="original_")
    write_artifacts(alt.trace, cfg, out, prefix="alternative_")
    write_information_pairs(info, info_alt, out / "information_pairs.csv")
    report = {
        "target": p.target,
        "counterpart": alt.counterpart + 1,
        "case": alt.case,
        "adversaries": p.adversaries,
        "delta": delta.tolist(),
        "max_information_difference": diff,
        "state_agreement_k1": agree,
    }
    (out / "replay.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log(f"replay: node {p.target} shifted by {delta.tolist()}, counterpart node {alt.counterpart + 1} ({alt.case}-neighbor)")
    log(f"  max |I − Ĩ| over the adversaries' information: {diff:.3e}")
    log(f"  state agreement at k=1: {agree:.3e}")
    return EXIT_OK


def _cmd_attack(cfg: ExperimentConfig, args, log) -> int:
    p = cfg.privacy
    if len(p.adversaries) != 1:
        raise TopologyMismatch("the attack is defined for a single adversary")
    trace = execute(cfg, sidecar=True)
    adversary, target = p.adversaries[0] - 1, p.target - 1
    info = collect_information(trace, adversary)
    result = attack_sole_neighbor(info, target)
    suite = trace.suite
    truth = suite.objectives[target].grad(suite.x_star) if suite.x_star is not None else None
    args.out.mkdir(parents=True, exist_ok=True)
    with (args.out / "attack.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coordinate", "estimate", "true_gradient_at_optimum"])
        for c, value in enumerate(result.estimate):
            w.writerow([c, fmt(value), "" if truth is None else fmt(truth[c])])
    log(f"attack by node {adversary + 1} on node {target + 1}: estimate {np.round(result.estimate, 9).tolist()}")
    if truth is not None:
        log(f"  true ∇f_{target + 1}(x*): {np.round(truth, 9).tolist()}")
    log(f"  convergence proxy {result.residual_proxy:.3e} ({'converged' if result.converged else 'NOT converged'})")
    return EXIT_OK


def _roundoff_floor(trace: ExecutionTrace) -> float:
    """Absolute slack for the lemma checks: a few ulps of the largest state entry per node."""
    return 64.0 * np.finfo(float).eps * trace.n * (1.0 + float(np.max(np.abs(trace.x[-1]))))


def analyze_trace(trace: ExecutionTrace, cfg: ExperimentConfig, out: Path, L: int = 200) -> dict:
    """Conservation, rate fit, v/φ bounds, lemma inequalities and the M(λ) certificate."""
    out.mkdir(parents=True, exist_ok=True)
    if not trace.has_sidecar:
        raise MissingSidecar("analysis needs a trace recorded with the sidecar")
    suite = trace.suite if trace.suite is not None else cfg.suite.build()
    n, eta, lam = trace.n, cfg.schedule.eta, cfg.schedule.lam
    report: dict = {}

    cons = conservation_series(trace, relative=True)
    write_error_csv(cons, out / "conservation.csv")
    report["conservation_max_relative"] = float(np.max(cons))

    if trace.err is not None:
        report.update({f"fit_{k}": v for k, v in _summary(trace).items() if k in ("rate", "goodness", "rate_note")})

    floor = eta ** (n - 1) / n
    if trace.T > trace.K:
        V = absolute_probability_v(trace)
        report["v_min"] = float(V.min())
        report["v_lower_bound"] = floor
        report["v_within_bounds"] = bool(V.min() >= floor * (1 - 1e-12) and V.max() <= 1 + 1e-12)
        report["v_sum_error"] = float(np.max(np.abs(V.sum(axis=1) - 1)))

    c = lemma_constants(n, eta, suite.beta_bar, suite.alpha_F, suite.beta_F)
    report["Q_R"], report["Q_P"], report["N_R"], report["N_P"] = c.Q_R, c.Q_P, c.N_R, c.N_P
    rows = []
    if trace.x_star is not None and trace.T > trace.K:
        schedule = TableIISchedule(trace.graph, trace.d, cfg.schedule) if trace.meta.get("algorithm", TABLE_II) == TABLE_II else None
        diag = diagnostics(trace, L=L, schedule=schedule)
        report["phi_truncation_error_max"] = float(np.max(diag.phi_error[np.isfinite(diag.phi_error)], initial=0.0))
        rows = lemma_checks(trace, diag, c, lam, atol=_roundoff_floor(trace))
    with (out / "lemmas.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lemma", "applicable", "checked", "violations", "worst_ratio", "passed", "note"])
        for r in rows:
            w.writerow([r.name, r.applicable, r.checked, r.violations, fmt(r.worst_ratio), r.passed, r.note])
    report["lemmas"] = {r.name: ("pass" if r.passed else ("n/a" if not r.applicable else "FAIL")) for r in rows}

    try:
        M = build_M(c, 0.0)
        report["rho_M0"] = float(M.spectral_radius(0.0))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NotConvergedWarning)
            report["rho_derivative_at_0"], report["rho_derivative_eps"] = eigen_derivative(M)
        report["rho_derivative_converged"] = not any(issubclass(w.category, NotConvergedWarning) for w in caught)
        report["rho_derivative_predicted"] = c.slope
        report["certified_lambda"] = certified_stepsize(M)
    except DimensionTooLarge as exc:
        report["certificate"] = f"vacuous: {exc}"

    (out / "analysis.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    lines = [f"{k}: {v}" for k, v in sorted(report.items())]
    (out / "analysis.txt").write_text("\n".join(lines) + "\n")
    return report


def _cmd_analyze(cfg: ExperimentConfig | None, args, log) -> int:
    if args.trace is not None:
        trace = load_trace(args.trace)
        if "config" not in trace.meta:
            raise ConfigError("trace: sidecar carries no embedded config")
        cfg = config_from_dict(trace.meta["config"])
        trace.suite = cfg.suite.build()
    else:
        if cfg is None:
            raise ConfigError("config: analyze needs --config or --trace")
        trace = execute(cfg, sidecar=True)
    report = analyze_trace(trace, cfg, args.out)
    for key, value in sorted(report.items()):
        log(f"{key}: {value}")
    return EXIT_OK


def _cmd_presets(args, log) -> int:
    print("experiments:")
    for name, data in EXPERIMENT_PRESETS.items():
        g = data["graph"] if isinstance(data["graph"], str) else f"ring({data['graph']['n']})"
        s = data["schedule"]
        print(f"  {name}: graph={g} suite={data['suite']['kind']} K={s['K']} lam={s['lam']} T={data['T']} mode={data['mode']}")
    print("algorithms:")
    print(f"  {TABLE_II}: randomized two-phase schedule")
    for name, slots in PRESETS.items():
        print(f"  {name}: R={slots[0]} A={slots[1]} C={slots[2]} B={slots[3]} stepsize={slots[4]}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config path or built-in experiment name")
    common.add_argument("--seed", type=int, help="override the schedule and initial-state seeds")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress the summary")

    parser = argparse.ArgumentParser(prog="dynpriv", description="Privacy-preserving gradient-tracking experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run an experiment and write its artifacts")
    sub.add_parser("attack", parents=[common], help="sole-neighbor gradient inference attack")
    sub.add_parser("replay", parents=[common], help="indistinguishable replay under a gradient shift")
    p = sub.add_parser("analyze", parents=[common], help="convergence diagnostics of a trace")
    p.add_argument("--trace", type=Path, help="sidecar (.npz) of a previous run")
    p = sub.add_parser("compare", parents=[common], help="error series of several algorithms")
    p.add_argument("--algorithms", nargs="+", help="override the config's algorithm list")
    p = sub.add_parser("presets", help="list built-in experiments and algorithms")
    p.add_argument("action", choices=["list"])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        return _cmd_presets(args, print)
    log = _Log(args.quiet)
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
        elif args.command != "analyze":
            raise ConfigError("config: --config is required")
        handler = {
            "run": _cmd_run,
            "attack": _cmd_attack,
            "replay": _cmd_replay,
            "analyze": _cmd_analyze,
            "compare": _cmd_compare,
        }[args.command]
        return handler(cfg, args, log)
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _PRIVACY_ERRORS as exc:
        print(f"privacy precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRIVACY
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DynPrivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
