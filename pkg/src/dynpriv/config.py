"""Experiment configuration: schema, defaults, validation and built-in presets.

Configs are YAML mappings. Every field has a default except ``graph`` and
``suite``. Node labels in configs are 1-based. Validation errors name the
offending field path, e.g. ``schedule.eta``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from dynpriv.errors import ConfigError, DynPrivError
from dynpriv.graph import DirectedGraph, cycle3, fig1b, parse_arrows, ring_graph
from dynpriv.objectives import ObjectiveSuite, estimation_suite, random_estimation_suite, rendezvous_suite
from dynpriv.weights import Distribution, ScheduleConfig

__all__ = [
    "GraphSpec",
    "SuiteSpec",
    "OutputSpec",
    "PrivacySpec",
    "ExperimentConfig",
    "EXPERIMENT_PRESETS",
    "load_config",
    "parse_config",
    "config_from_dict",
]

NAMED_GRAPHS = {"cycle3": cycle3, "fig1b": fig1b}
MODES = ("run", "attack", "replay", "analyze", "compare")


@dataclass
class GraphSpec:
    """``kind`` is ``edges`` (``n`` plus ``"j -> i"`` arrows), ``ring`` (``n``) or ``named`` (``name``)."""

    kind: str = "named"
    n: int | None = None
    edges: list[str] = field(default_factory=list)
    name: str | None = None

    def build(self) -> DirectedGraph:
        if self.kind == "ring":
            return ring_graph(self.n)
        if self.kind == "named":
            return NAMED_GRAPHS[self.name]()
        return parse_arrows(self.n, self.edges)


@dataclass
class SuiteSpec:
    """``kind`` is ``rendezvous`` (``positions``), ``estimation`` (``n, d, s, sigma, seed``) or ``matrices`` (``Q, z, sigma``)."""

    kind: str = "rendezvous"
    positions: list | None = None
    n: int | None = None
    d: int = 2
    s: int = 3
    sigma: float | list[float] = 0.1
    seed: int = 0
    Q: list | None = None
    z: list | None = None

    def build(self) -> ObjectiveSuite:
        if self.kind == "rendezvous":
            return rendezvous_suite(self.positions)
        if self.kind == "estimation":
            return random_estimation_suite(self.n, d=self.d, s=self.s, sigma=float(self.sigma), seed=self.seed)
        return estimation_suite(self.Q, self.z, self.sigma)


@dataclass
class OutputSpec:
    """File names relative to the output directory; ``None`` disables an artifact."""

    trace_csv: str | None = "trace.csv"
    error_csv: str = "error.csv"
    metadata: str = "metadata.json"
    svg: str | None = "error.svg"
    sidecar: bool = True
    keep_states: bool = True


@dataclass
class PrivacySpec:
    """Settings for ``attack`` and ``replay`` (1-based node labels)."""

    adversaries: list[int] = field(default_factory=lambda: [3])
    target: int = 1
    counterpart: int | None = None
    delta: list[float] | float = 5.0


@dataclass
class ExperimentConfig:
    graph: GraphSpec
    suite: SuiteSpec
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    T: int = 400
    init_seed: int = 0
    init_box: tuple[float, float] = (-5.0, 5.0)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    privacy: PrivacySpec = field(default_factory=PrivacySpec)
    mode: str = "run"
    compare: list[str] = field(default_factory=lambda: ["TableII", "AB", "DIGing"])
    name: str = "custom"

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["schedule"] = self.schedule.to_dict()
        out["init_box"] = list(self.init_box)
        return out

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Copy with the schedule and initial-state seeds replaced."""
        cfg = copy.deepcopy(self)
        cfg.schedule = ScheduleConfig(
            K=cfg.schedule.K, eta=cfg.schedule.eta, lam=cfg.schedule.lam,
            distribution=cfg.schedule.distribution, seed=int(seed),
        )
        cfg.init_seed = int(seed)
        return cfg


# --- parsing -------------------------------------------------------------------------


def _take(data: dict, path: str, allowed: set[str]) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")
    return data


def _typed(value, kind, path: str):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise TypeError(kind)


def _opt_str(value, path: str) -> str | None:
    return None if value is None else _typed(value, str, path)


def _graph(data, path: str = "graph") -> GraphSpec:
    if data is None:
        raise ConfigError(f"{path}: required field missing")
    if isinstance(data, str):
        data = {"kind": "named", "name": data}
    d = _take(data, path, {"kind", "n", "edges", "name"})
    kind = _typed(d.get("kind", "edges" if "edges" in d else "named"), str, f"{path}.kind")
    if kind == "named":
        name = _typed(d.get("name"), str, f"{path}.name") if d.get("name") is not None else None
        if name not in NAMED_GRAPHS:
            raise ConfigError(f"{path}.name: unknown graph {name!r}; choose from {sorted(NAMED_GRAPHS)}")
        spec = GraphSpec("named", name=name)
    elif kind == "ring":
        spec = GraphSpec("ring", n=_typed(d.get("n"), int, f"{path}.n"))
    elif kind == "edges":
        edges = d.get("edges")
        if not isinstance(edges, list) or not edges:
            raise ConfigError(f"{path}.edges: expected a non-empty list of 'j -> i' strings")
        spec = GraphSpec("edges", n=_typed(d.get("n"), int, f"{path}.n"), edges=[str(e) for e in edges])
    else:
        raise ConfigError(f"{path}.kind: expected named, ring or edges, got {kind!r}")
    try:
        spec.build()
    except DynPrivError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec


def _suite(data, path: str = "suite") -> SuiteSpec:
    if data is None:
        raise ConfigError(f"{path}: required field missing")
    d = _take(data, path, {"kind", "positions", "n", "d", "s", "sigma", "seed", "Q", "z"})
    kind = _typed(d.get("kind", "rendezvous"), str, f"{path}.kind")
    if kind == "rendezvous":
        pos = d.get("positions")
        if pos is None:
            raise ConfigError(f"{path}.positions: required for a rendezvous suite")
        spec = SuiteSpec("rendezvous", positions=np.asarray(pos, dtype=float).tolist())
    elif kind == "estimation":
        spec = SuiteSpec(
            "estimation",
            n=_typed(d.get("n"), int, f"{path}.n"),
            d=_typed(d.get("d", 2), int, f"{path}.d"),
            s=_typed(d.get("s", 3), int, f"{path}.s"),
            sigma=_typed(d.get("sigma", 0.1), float, f"{path}.sigma"),
            seed=_typed(d.get("seed", 0), int, f"{path}.seed"),
        )
        for key in ("n", "d", "s"):
            if getattr(spec, key) < 1:
                raise ConfigError(f"{path}.{key}: must be positive")
    elif kind == "matrices":
        if d.get("Q") is None or d.get("z") is None:
            raise ConfigError(f"{path}.Q: explicit suites need both Q and z")
        sigma = d.get("sigma", 0.1)
        spec = SuiteSpec("matrices", Q=d["Q"], z=d["z"], sigma=sigma)
    else:
        raise ConfigError(f"{path}.kind: expected rendezvous, estimation or matrices, got {kind!r}")
    try:
        spec.build()
    except (DynPrivError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec


def _schedule(data, path: str = "schedule") -> ScheduleConfig:
    d = _take(data, path, {"K", "eta", "lam", "distribution", "seed"})
    dist = _take(d.get("distribution"), f"{path}.distribution", {"kind", "a", "b"})
    base = Distribution()
    kind = _typed(dist.get("kind", base.kind), str, f"{path}.distribution.kind")
    a = _typed(dist.get("a", base.a), float, f"{path}.distribution.a")
    b = _typed(dist.get("b", base.b), float, f"{path}.distribution.b")
    try:
        distribution = Distribution(kind=kind, a=a, b=b)
    except ValueError as exc:
        raise ConfigError(f"{path}.distribution: {exc}") from exc
    default = ScheduleConfig()
    values = {
        "K": _typed(d.get("K", default.K), int, f"{path}.K"),
        "eta": _typed(d.get("eta", default.eta), float, f"{path}.eta"),
        "lam": _typed(d.get("lam", default.lam), float, f"{path}.lam"),
        "seed": _typed(d.get("seed", default.seed), int, f"{path}.seed"),
    }
    if values["K"] < 0:
        raise ConfigError(f"{path}.K: must be nonnegative")
    if not 0.0 < values["eta"] < 1.0:
        raise ConfigError(f"{path}.eta: must lie in (0, 1), got {values['eta']}")
    if not values["lam"] > 0.0:
        raise ConfigError(f"{path}.lam: must be positive")
    try:
        return ScheduleConfig(distribution=distribution, **values)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _outputs(data, path: str = "outputs") -> OutputSpec:
    d = _take(data, path, {"trace_csv", "error_csv", "metadata", "svg", "sidecar", "keep_states"})
    base = OutputSpec()
    out = OutputSpec(
        trace_csv=_opt_str(d.get("trace_csv", base.trace_csv), f"{path}.trace_csv"),
        error_csv=_typed(d.get("error_csv", base.error_csv), str, f"{path}.error_csv"),
        metadata=_typed(d.get("metadata", base.metadata), str, f"{path}.metadata"),
        svg=_opt_str(d.get("svg", base.svg), f"{path}.svg"),
        sidecar=_typed(d.get("sidecar", base.sidecar), bool, f"{path}.sidecar"),
        keep_states=_typed(d.get("keep_states", base.keep_states), bool, f"{path}.keep_states"),
    )
    if not out.keep_states and (out.sidecar or out.trace_csv):
        raise ConfigError(f"{path}.keep_states: false requires sidecar: false and trace_csv: null")
    return out


def _privacy(data, n: int, path: str = "privacy") -> PrivacySpec:
    d = _take(data, path, {"adversaries", "target", "counterpart", "delta"})
    base = PrivacySpec()
    adv = d.get("adversaries", base.adversaries)
    if isinstance(adv, int):
        adv = [adv]
    if not isinstance(adv, list) or not adv:
        raise ConfigError(f"{path}.adversaries: expected a non-empty list of node labels")
    adv = [_typed(a, int, f"{path}.adversaries") for a in adv]
    target = _typed(d.get("target", base.target), int, f"{path}.target")
    cp = d.get("counterpart")
    cp = None if cp is None else _typed(cp, int, f"{path}.counterpart")
    for label, value in [("adversaries", a) for a in adv] + [("target", target)] + ([("counterpart", cp)] if cp else []):
        if not 1 <= value <= n:
            raise ConfigError(f"{path}.{label}: node {value} outside 1..{n}")
    delta = d.get("delta", base.delta)
    try:
        delta = np.asarray(delta, dtype=float).tolist()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.delta: {exc}") from exc
    return PrivacySpec(adv, target, cp, delta)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping and fill defaults.

    Raises:
        ConfigError: naming the first offending field path.
    """
    top = _take(data, "config", {
        "graph", "suite", "schedule", "T", "init_seed", "init_box", "outputs",
        "privacy", "mode", "compare", "name",
    })
    graph = _graph(top.get("graph"))
    suite = _suite(top.get("suite"))
    g, s = graph.build(), suite.build()
    if g.n != s.n:
        raise ConfigError(f"suite: {s.n} objectives for a {g.n}-node graph")
    schedule = _schedule(top.get("schedule"))
    T = _typed(top.get("T", 400), int, "T")
    if T < 1:
        raise ConfigError("T: must be at least 1")
    box = top.get("init_box", [-5.0, 5.0])
    if not (isinstance(box, (list, tuple)) and len(box) == 2):
        raise ConfigError("init_box: expected [lo, hi]")
    box = (_typed(box[0], float, "init_box[0]"), _typed(box[1], float, "init_box[1]"))
    if not box[0] < box[1]:
        raise ConfigError("init_box: lo must be below hi")
    mode = _typed(top.get("mode", "run"), str, "mode")
    if mode not in MODES:
        raise ConfigError(f"mode: expected one of {MODES}, got {mode!r}")
    compare = top.get("compare", ["TableII", "AB", "DIGing"])
    if not isinstance(compare, list) or not compare:
        raise ConfigError("compare: expected a non-empty list of algorithm names")
    return ExperimentConfig(
        graph=graph,
        suite=suite,
        schedule=schedule,
        T=T,
        init_seed=_typed(top.get("init_seed", 0), int, "init_seed"),
        init_box=box,
        outputs=_outputs(top.get("outputs")),
        privacy=_privacy(top.get("privacy"), g.n),
        mode=mode,
        compare=[_typed(c, str, "compare") for c in compare],
        name=_typed(top.get("name", "custom"), str, "name"),
    )


# --- built-in experiments -------------------------------------------------------------

EXPERIMENT_PRESETS: dict[str, dict[str, Any]] = {
    "fig2": {
        "name": "fig2",
        "mode": "replay",
        "graph": "cycle3",
        "suite": {"kind": "rendezvous", "positions": [[1.0], [3.0], [8.0]]},
        "schedule": {"K": 3, "eta": 0.1, "lam": 0.06, "seed": 0},
        "T": 100,
        "privacy": {"adversaries": [3], "target": 1, "delta": 5.0},
    },
    "fig4": {
        "name": "fig4",
        "mode": "run",
        "graph": "fig1b",
        "suite": {"kind": "estimation", "n": 5, "d": 2, "s": 3, "sigma": 0.1, "seed": 0},
        "schedule": {"K": 3, "eta": 0.1, "lam": 0.06, "seed": 0},
        "T": 400,
        "compare": ["TableII", "AB", "DIGing"],
    },
    "fig7": {
        "name": "fig7",
        "mode": "run",
        "graph": {"kind": "ring", "n": 100},
        "suite": {"kind": "estimation", "n": 100, "d": 2, "s": 3, "sigma": 0.1, "seed": 0},
        "schedule": {"K": 3, "eta": 0.1, "lam": 5e-6, "seed": 0},
        "T": 80000,
        "outputs": {"trace_csv": None, "sidecar": False, "keep_states": False},
    },
}


def load_config(source: str | Path) -> ExperimentConfig:
    """Parse a YAML file, or return a built-in experiment by name.

    Raises:
        ConfigError: unreadable file, invalid YAML or an invalid field.
    """
    if isinstance(source, str) and source in EXPERIMENT_PRESETS:
        return parse_config(copy.deepcopy(EXPERIMENT_PRESETS[source]))
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML in {path}: {exc}") from exc
    return parse_config(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Round-trip inverse of :meth:`ExperimentConfig.to_dict`."""
    data = copy.deepcopy(data)
    g = data.get("graph") or {}
    data["graph"] = {k: v for k, v in g.items() if v not in (None, [])} if isinstance(g, dict) else g
    s = data.get("suite") or {}
    if isinstance(s, dict):
        keep = {
            "rendezvous": ("kind", "positions"),
            "estimation": ("kind", "n", "d", "s", "sigma", "seed"),
            "matrices": ("kind", "Q", "z", "sigma"),
        }.get(s.get("kind"), tuple(s))
        data["suite"] = {k: s[k] for k in keep if k in s}
    return parse_config(data)
