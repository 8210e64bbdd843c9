"""Gradient-tracking protocol with two message exchanges per iteration.

One iteration ``k``:

a. every node ``j`` broadcasts ``x_j`` and ``Λ_j y_j``;
b. every node ``i`` sets ``x_i ← Σ_{j ∈ N_i^in ∪ {i}} (R_ij x_j − A_ij Λ_j y_j)``;
c. every node ``j`` evaluates its new gradient and sends
   ``C_ij y_j + B_ij (∇f_j^{k+1} − ∇f_j^k)`` to each out-neighbor ``i``;
d. every node ``i`` sets ``y_i`` to the sum of what it received plus its own term.

All weight blocks are diagonal and are stored against ``graph.pairs``.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from dynpriv.errors import NonFiniteState, StochasticityViolation, WrongPreset
from dynpriv.graph import DirectedGraph
from dynpriv.objectives import ObjectiveSuite
from dynpriv.weights import FAMILIES, ExplicitSchedule, IterationParameters

__all__ = [
    "NetworkState",
    "NodeState",
    "Message",
    "Messages",
    "ExecutionTrace",
    "Schedule",
    "ConstantSchedule",
    "initialize",
    "step",
    "run",
    "replay",
    "PRESETS",
    "default_weights",
    "instantiate_preset",
    "extra_equivalence_check",
]

DEFAULT_INIT_BOX = (-5.0, 5.0)


class Schedule(Protocol):
    K: int

    def params(self, k: int) -> IterationParameters: ...


@dataclass(frozen=True)
class NodeState:
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Stacked states ``x, y`` and the gradients at ``x``, each ``(n, d)``."""

    x: np.ndarray
    y: np.ndarray
    grad: np.ndarray

    def node(self, i: int) -> NodeState:
        return NodeState(self.x[i], self.y[i])

    def nodes(self) -> list[NodeState]:
        return [self.node(i) for i in range(len(self.x))]


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    k: int
    kind: str  # "XLambdaY" or "TrackerUpdate"
    payload: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class Messages:
    """Everything put on the wire in one iteration.

    ``x`` and ``ly`` are the step-a broadcasts (one row per sender). ``tracker``
    is aligned with ``graph.pairs``; the self pairs hold each node's own term,
    which never leaves the node.
    """

    k: int
    x: np.ndarray
    ly: np.ndarray
    tracker: np.ndarray

    def iter_wire(self, graph: DirectedGraph) -> Iterator[Message]:
        for i, j in sorted(graph.edges, key=lambda e: (e[1], e[0])):
            yield Message(j, i, self.k, "XLambdaY", (self.x[j], self.ly[j]))
        for p, (i, j) in enumerate(graph.pairs):
            if i != j:
                yield Message(j, i, self.k, "TrackerUpdate", (self.tracker[p],))


def _scatter(values: np.ndarray, graph: DirectedGraph) -> np.ndarray:
    # Sum pair terms into receivers in ascending pair order.
    n, d = graph.n, values.shape[1]
    return np.bincount(graph.flat_receivers(d), weights=values.ravel(), minlength=n * d).reshape(n, d)


def initialize(
    suite: ObjectiveSuite,
    graph: DirectedGraph,
    init_box: tuple[float, float] = DEFAULT_INIT_BOX,
    rng: np.random.Generator | int | None = 0,
) -> NetworkState:
    """Uniform ``x_i^0`` in the box and ``y_i^0 = ∇f_i(x_i^0)``."""
    if suite.n != graph.n:
        raise ValueError(f"suite has {suite.n} objectives but graph has {graph.n} nodes")
    rng = np.random.default_rng(rng)
    x0 = rng.uniform(init_box[0], init_box[1], size=(graph.n, suite.dim))
    return state_from_x(suite, x0)


def state_from_x(suite: ObjectiveSuite, x0: np.ndarray) -> NetworkState:
    x0 = np.array(x0, dtype=float).reshape(suite.n, suite.dim)
    g0 = suite.gradients(x0)
    return NetworkState(x0, g0.copy(), g0)


def step(
    state: NetworkState,
    params: IterationParameters,
    suite: ObjectiveSuite,
    graph: DirectedGraph,
) -> tuple[NetworkState, Messages]:
    """One synchronous iteration; returns the new state and the wire content."""
    x, y, g = state.x, state.y, state.grad
    snd = graph.senders

    with np.errstate(over="ignore", invalid="ignore"):
        ly = params.lam * y
        x_new = _scatter(params.R * x[snd] - params.A * ly[snd], graph)
        g_new = suite.gradients(x_new)
        tracker = params.C * y[snd] + params.B * (g_new - g)[snd]
        y_new = _scatter(tracker, graph)

    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
        raise NonFiniteState(params.k)
    return NetworkState(x_new, y_new, g_new), Messages(params.k, x, ly, tracker)


@dataclass(eq=False)
class ExecutionTrace:
    """States for ``k = 0..T`` and, with the sidecar, parameters and messages for ``k < T``.

    Attributes:
        x, y, grad: ``(T+1, n, d)`` arrays.
        err: ``‖x^k − 1 ⊗ x*‖`` per iteration, or ``None`` without an optimum.
        params: Per-iteration parameters (sidecar), or ``None``.
        ly: ``Λ_j^k y_j^k`` broadcasts, ``(T, n, d)`` (sidecar).
        tracker: Tracker-update terms aligned with ``graph.pairs``, ``(T, P, d)`` (sidecar).
        meta: Free-form configuration echo.
        horizon: Set when only the first and last states were kept.
    """

    graph: DirectedGraph
    K: int
    x: np.ndarray
    y: np.ndarray
    grad: np.ndarray
    err: np.ndarray | None = None
    params: list[IterationParameters] | None = None
    ly: np.ndarray | None = None
    tracker: np.ndarray | None = None
    suite: ObjectiveSuite | None = None
    x_star: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    horizon: int | None = None

    @property
    def T(self) -> int:
        return self.horizon if self.horizon is not None else self.x.shape[0] - 1

    @property
    def states_kept(self) -> bool:
        return self.horizon is None

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    @property
    def has_sidecar(self) -> bool:
        return self.params is not None and self.tracker is not None

    def state(self, k: int) -> NetworkState:
        return NetworkState(self.x[k], self.y[k], self.grad[k])

    def stacked(self, family: str) -> np.ndarray:
        return np.stack([p.family(family) for p in self.params])

    def schedule(self) -> ExplicitSchedule:
        return ExplicitSchedule(self.params, K=self.K)


def run(
    suite: ObjectiveSuite,
    graph: DirectedGraph,
    schedule: Schedule,
    T: int,
    rng: np.random.Generator | int | None = 0,
    *,
    init_box: tuple[float, float] = DEFAULT_INIT_BOX,
    x0: np.ndarray | None = None,
    sidecar: bool = True,
    keep_states: bool = True,
    meta: dict | None = None,
) -> ExecutionTrace:
    """Execute ``T`` iterations and record the trace.

    Args:
        rng: Seed or generator for the initial ``x^0`` (ignored when ``x0`` is given).
        sidecar: Keep parameters and messages (needed for privacy replay and
            most of the analysis); switch off for long runs on large graphs.
        keep_states: With ``False`` only ``k = 0`` and ``k = T`` are stored and
            the error series is accumulated on the fly. Implies no sidecar.

    Raises:
        NonFiniteState: with the offending iteration index.
    """
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    sidecar = sidecar and keep_states
    state = state_from_x(suite, x0) if x0 is not None else initialize(suite, graph, init_box, rng)
    n, d = state.x.shape
    slots = T + 1 if keep_states else 2
    xs = np.empty((slots, n, d))
    ys = np.empty_like(xs)
    gs = np.empty_like(xs)
    xs[0], ys[0], gs[0] = state.x, state.y, state.grad
    params_log: list[IterationParameters] | None = [] if sidecar else None
    ly = np.empty((T, n, d)) if sidecar else None
    tracker = np.empty((T, graph.num_pairs, d)) if sidecar else None
    x_star = suite.x_star
    err = None
    if x_star is not None and not keep_states:
        err = np.empty(T + 1)
        err[0] = np.sqrt(np.sum((state.x - x_star) ** 2))

    for k in range(T):
        params = schedule.params(k)
        state, msgs = step(state, params, suite, graph)
        if keep_states:
            xs[k + 1], ys[k + 1], gs[k + 1] = state.x, state.y, state.grad
        elif err is not None:
            err[k + 1] = np.sqrt(np.sum((state.x - x_star) ** 2))
        if sidecar:
            params_log.append(params)
            ly[k] = msgs.ly
            tracker[k] = msgs.tracker
    if not keep_states:
        xs[1], ys[1], gs[1] = state.x, state.y, state.grad
    elif x_star is not None:
        err = np.sqrt(np.sum((xs - x_star) ** 2, axis=(1, 2)))
    return ExecutionTrace(
        graph=graph,
        K=getattr(schedule, "K", 0),
        x=xs,
        y=ys,
        grad=gs,
        err=err,
        params=params_log,
        ly=ly,
        tracker=tracker,
        suite=suite,
        x_star=x_star,
        meta=dict(meta or {}),
        horizon=None if keep_states else T,
    )


def replay(trace: ExecutionTrace, suite: ObjectiveSuite | None = None) -> ExecutionTrace:
    """Re-run the recorded parameters from the recorded ``x^0``."""
    suite = suite if suite is not None else trace.suite
    if suite is None or not trace.has_sidecar:
        raise ValueError("replay needs the objective suite and a trace with sidecar")
    return run(suite, trace.graph, trace.schedule(), trace.T, x0=trace.x[0], meta=trace.meta)


# --- fixed-weight presets ---------------------------------------------------

# Slot names per preset, in the order R, A, C, B, Λ.
PRESETS: dict[str, tuple[str, str, str, str, str]] = {
    "AugDGM": ("W", "W", "W", "W", "Lambda"),
    "DIGing": ("W", "I", "W", "I", "lamI"),
    "ATCDIGing": ("W", "W", "W", "W", "Lambda"),
    "AsynDGM": ("W", "W", "W", "I", "Lambda"),
    "AB": ("R", "I", "C", "C", "lamI"),
    "PushPull_pu": ("R", "R", "C", "C", "lamI"),
    "PushPull_du": ("R", "I", "C", "I", "lamI"),
    "PushPull_zhang": ("R", "R", "C", "I", "lamI"),
    "EXTRA": ("R", "I", "C", "I", "Lambda"),
}


class ConstantSchedule:
    """Time-invariant parameters."""

    K = 0

    def __init__(self, template: IterationParameters, name: str = "constant"):
        for f in FAMILIES:
            template.family(f).setflags(write=False)
        self.template = template
        self.name = name

    def params(self, k: int) -> IterationParameters:
        return self.template.replace(k=k)

    def describe(self) -> dict:
        return {"type": "preset", "name": self.name}


def _uniform_row(graph: DirectedGraph) -> np.ndarray:
    R = np.zeros((graph.n, graph.n))
    for i in range(graph.n):
        nb = (*graph.in_neighbors(i), i)
        R[i, list(nb)] = 1.0 / len(nb)
    return R


def _uniform_column(graph: DirectedGraph) -> np.ndarray:
    C = np.zeros((graph.n, graph.n))
    for j in range(graph.n):
        nb = (*graph.out_neighbors(j), j)
        C[list(nb), j] = 1.0 / len(nb)
    return C


def _cycle_average(graph: DirectedGraph) -> np.ndarray:
    """Doubly stochastic ``W`` supported on the graph: mean of one cycle permutation per edge and ``I``."""
    n = graph.n
    W = np.eye(n)
    for i, j in sorted(graph.edges):
        # edge j -> i closed by a shortest path i -> ... -> j
        parent = {i: None}
        frontier = [i]
        while j not in parent:
            nxt = []
            for u in frontier:
                for v in graph.out_neighbors(u):
                    if v not in parent:
                        parent[v] = u
                        nxt.append(v)
            frontier = nxt
        P = np.eye(n)
        node = j
        cycle = [j]
        while parent[node] is not None:
            node = parent[node]
            cycle.append(node)
        # cycle lists j, ..., i along reversed path; mass flows sender -> receiver
        order = cycle[::-1]  # i -> ... -> j
        ring = order + [order[0]]
        for a in order:
            P[a, a] = 0.0
        for a, b in zip(ring[:-1], ring[1:]):
            P[b, a] = 1.0
        W += P
    return W / (len(graph.edges) + 1)


def default_weights(graph: DirectedGraph) -> dict[str, np.ndarray]:
    """Uniform row-stochastic ``R``, column-stochastic ``C`` and a doubly stochastic ``W``."""
    return {"R": _uniform_row(graph), "C": _uniform_column(graph), "W": _cycle_average(graph)}


def _check_matrix(name: str, M: np.ndarray, graph: DirectedGraph, rows: bool, cols: bool, tol: float) -> None:
    n = graph.n
    if M.shape != (n, n):
        raise StochasticityViolation(name, f"shape {M.shape}, expected {(n, n)}")
    if np.any(M < -tol):
        raise StochasticityViolation(name, "negative entry")
    off = np.abs(M) * (1.0 - graph.adjacency())
    if np.any(off > tol):
        i, j = np.argwhere(off > tol)[0]
        raise StochasticityViolation(name, f"weight on missing edge {j + 1} -> {i + 1}")
    if rows and np.max(np.abs(M.sum(axis=1) - 1.0)) > tol:
        raise StochasticityViolation(name, "not row-stochastic")
    if cols and np.max(np.abs(M.sum(axis=0) - 1.0)) > tol:
        raise StochasticityViolation(name, "not column-stochastic")


def instantiate_preset(
    name: str,
    graph: DirectedGraph,
    d: int,
    *,
    lam: float | Sequence[float] | np.ndarray = 0.06,
    W: np.ndarray | None = None,
    R: np.ndarray | None = None,
    C: np.ndarray | None = None,
    tol: float = 1e-12,
) -> ConstantSchedule:
    """Constant schedule realizing one of the fixed-weight algorithms in :data:`PRESETS`.

    Missing weight matrices default to :func:`default_weights`. ``lam`` may be a
    scalar, or for heterogeneous-stepsize presets a per-node vector or an
    ``(n, d)`` array.

    Raises:
        StochasticityViolation: a supplied matrix lacks the stochasticity its slot needs.
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    slots = PRESETS[name]
    defaults = default_weights(graph)
    mats = {"W": W, "R": R, "C": C}
    needed = set(slots[:4]) - {"I"}
    for key in needed:
        if mats[key] is None:
            mats[key] = defaults[key]
        M = np.asarray(mats[key], dtype=float)
        _check_matrix(key, M, graph, rows=key in ("W", "R"), cols=key in ("W", "C"), tol=tol)
        mats[key] = M
    mats["I"] = np.eye(graph.n)

    lam_arr = np.asarray(lam, dtype=float)
    if slots[4] == "lamI" and lam_arr.ndim != 0:
        raise ValueError(f"{name} uses a homogeneous stepsize; pass a scalar lam")
    lam_arr = np.broadcast_to(lam_arr.reshape(-1, 1) if lam_arr.ndim == 1 else lam_arr, (graph.n, d)).copy()

    def pairs_of(M: np.ndarray) -> np.ndarray:
        return np.repeat(M[graph.receivers, graph.senders][:, None], d, axis=1)

    template = IterationParameters(
        k=0,
        lam=lam_arr,
        R=pairs_of(mats[slots[0]]),
        A=pairs_of(mats[slots[1]]),
        C=pairs_of(mats[slots[2]]),
        B=pairs_of(mats[slots[3]]),
    )
    return ConstantSchedule(template, name=name)


def extra_equivalence_check(trace: ExecutionTrace) -> float:
    """Max residual of the second-order EXTRA form over ``k >= 1``.

    Checks ``x^{k+1} = (R + C)x^k − CRx^{k−1} − Λ(∇f^k − ∇f^{k−1})`` on a trace
    run with constant ``R, A = I, C, B = I, Λ``. The identity needs ``Λ`` to
    commute with ``C``, which holds for a homogeneous stepsize.

    Raises:
        WrongPreset: the trace parameters are not of that form.
    """
    if not trace.has_sidecar or trace.T < 3:
        raise WrongPreset("need a trace with sidecar and at least 3 iterations")
    graph = trace.graph
    first = trace.params[0]
    for p in trace.params[1:]:
        if any(not np.array_equal(p.family(f), first.family(f)) for f in FAMILIES):
            raise WrongPreset(f"parameters change at iteration {p.k}")
    eye_pairs = (graph.receivers == graph.senders).astype(float)[:, None]
    for f in ("A", "B"):
        if not np.array_equal(first.family(f), np.broadcast_to(eye_pairs, first.family(f).shape)):
            raise WrongPreset(f"{f} is not the identity")

    Rb = first.block_matrix("R", graph)
    Cb = first.block_matrix("C", graph)
    Lb = first.block_matrix("lam", graph)
    X = trace.x.reshape(trace.T + 1, -1)
    G = trace.grad.reshape(trace.T + 1, -1)
    RC = Rb + Cb
    CR = Cb @ Rb
    worst = 0.0
    for k in range(1, trace.T):
        res = X[k + 1] - RC @ X[k] + CR @ X[k - 1] + Lb @ (G[k] - G[k - 1])
        worst = max(worst, float(np.linalg.norm(res)))
    return worst
