"""Per-iteration weight families ``Λ, R, A, C, B`` under the two-phase design.

Iterations ``k < K`` (private phase) draw every free entry from a distribution
with support on the whole real line; ``C_ii`` and ``B_ii`` absorb the remainder
so ``C`` and ``B`` stay column-stochastic. Iterations ``k >= K`` (stochastic
phase) use scalar blocks in ``[η, 1]`` with rows of ``R, A`` and columns of
``C, B`` summing to one, and a common stepsize ``λ``.

Each node draws from its own stream keyed by ``(seed, k, node)``, so a node's
weights never depend on what other nodes draw.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from dynpriv.errors import EmptySimplex
from dynpriv.graph import DirectedGraph

__all__ = [
    "Distribution",
    "ScheduleConfig",
    "IterationParameters",
    "Violation",
    "normalize_simplex",
    "node_stream",
    "sample_private",
    "sample_stochastic",
    "StochasticDraws",
    "validate",
    "TableIISchedule",
    "ExplicitSchedule",
    "FAMILIES",
]

FAMILIES = ("lam", "R", "A", "C", "B")
_SIMPLEX_SLACK = 1e-12

StreamFactory = Callable[[int, int], np.random.Generator]


@dataclass(frozen=True)
class Distribution:
    """Private-phase sampling law; ``a, b`` are (mean, std), (loc, scale) or (lo, hi)."""

    kind: str = "gaussian"
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace", "uniform"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind != "uniform" and self.b <= 0:
            raise ValueError("scale must be positive")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform needs lo < hi")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(self.a, self.b, size)
        if self.kind == "laplace":
            return rng.laplace(self.a, self.b, size)
        return rng.uniform(self.a, self.b, size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class ScheduleConfig:
    K: int = 3
    eta: float = 0.1
    lam: float = 0.06
    distribution: Distribution = field(default_factory=Distribution)
    seed: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.lam > 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")

    def check_graph(self, graph: DirectedGraph) -> None:
        """Raise :class:`EmptySimplex` if some node cannot host ``[η, 1]`` weights."""
        widest = max(graph.max_out_degree(), graph.max_in_degree()) + 1
        if widest * self.eta > 1.0 + _SIMPLEX_SLACK:
            raise EmptySimplex(f"{widest} weights in [{self.eta}, 1] cannot sum to 1")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "eta": self.eta,
            "lam": self.lam,
            "distribution": self.distribution.to_dict(),
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class IterationParameters:
    """Diagonal weight blocks for one iteration.

    ``lam`` has shape ``(n, d)``; ``R, A, C, B`` have shape ``(P, d)`` aligned with
    ``graph.pairs`` (row ``p`` holds the diagonal of the block for the pair
    ``(receiver, sender)``). Blocks outside the pair set are zero.
    """

    k: int
    lam: np.ndarray
    R: np.ndarray
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray

    def family(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replace(self, **arrays) -> IterationParameters:
        values = {f: arrays.get(f, getattr(self, f)) for f in FAMILIES}
        return IterationParameters(k=arrays.get("k", self.k), **values)

    def copy(self) -> IterationParameters:
        return IterationParameters(self.k, *(getattr(self, f).copy() for f in FAMILIES))

    def scalar_matrix(self, name: str, graph: DirectedGraph, coordinate: int = 0) -> np.ndarray:
        """``n x n`` matrix of one coordinate of a pair family (``R̄, Ā, C̄, B̄``)."""
        M = np.zeros((graph.n, graph.n))
        M[graph.receivers, graph.senders] = self.family(name)[:, coordinate]
        return M

    def block_matrix(self, name: str, graph: DirectedGraph) -> np.ndarray:
        """Full ``nd x nd`` block matrix; ``lam`` yields the block-diagonal ``Λ``."""
        d = self.lam.shape[1]
        n = graph.n
        M = np.zeros((n * d, n * d))
        if name == "lam":
            M[np.arange(n * d), np.arange(n * d)] = self.lam.reshape(-1)
            return M
        vals = self.family(name)
        for p, (i, j) in enumerate(graph.pairs):
            M[i * d + np.arange(d), j * d + np.arange(d)] = vals[p]
        return M


@dataclass(frozen=True)
class Violation:
    kind: str
    family: str
    node: int
    coordinate: int
    magnitude: float
    detail: str = ""

    def __str__(self) -> str:
        return (
            f"{self.kind}: {self.family} node {self.node + 1} coord {self.coordinate} "
            f"magnitude {self.magnitude:.3e} {self.detail}".rstrip()
        )


def normalize_simplex(p: Sequence[float] | np.ndarray, eta: float) -> np.ndarray:
    """Map values in ``[0, 1]`` to weights in ``[η, 1]`` summing to one.

    ``c_j = (1 − mη)((1 − η)p_j + η) / ((1 − η)Σp + mη) + η`` with ``m = len(p)``.

    Raises:
        EmptySimplex: if ``mη > 1``.
    """
    p = np.asarray(p, dtype=float)
    m = p.size
    if m * eta > 1.0 + _SIMPLEX_SLACK:
        raise EmptySimplex(f"{m} weights in [{eta}, 1] cannot sum to 1")
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("normalize_simplex expects values in [0, 1]")
    return (1.0 - m * eta) * ((1.0 - eta) * p + eta) / ((1.0 - eta) * p.sum() + m * eta) + eta


def node_stream(seed: int, k: int, node: int) -> np.random.Generator:
    """Independent generator for one node at one iteration."""
    return np.random.default_rng([int(seed) % 2**64, int(k), int(node)])


def _streams(config: ScheduleConfig, stream: StreamFactory | None) -> StreamFactory:
    if stream is not None:
        return stream
    return lambda k, i: node_stream(config.seed, k, i)


def _empty(graph: DirectedGraph, d: int, k: int) -> IterationParameters:
    P = graph.num_pairs
    return IterationParameters(
        k=k,
        lam=np.zeros((graph.n, d)),
        R=np.zeros((P, d)),
        A=np.zeros((P, d)),
        C=np.zeros((P, d)),
        B=np.zeros((P, d)),
    )


def sample_private(
    k: int,
    graph: DirectedGraph,
    d: int,
    config: ScheduleConfig,
    stream: StreamFactory | None = None,
) -> IterationParameters:
    """Draw a private-phase iteration; ``C`` and ``B`` are column-stochastic by construction."""
    if k >= config.K:
        raise ValueError(f"iteration {k} is not in the private phase (K={config.K})")
    stream = _streams(config, stream)
    dist = config.distribution
    out = _empty(graph, d, k)
    for i in range(graph.n):
        rng = stream(k, i)
        rows = graph.row_pairs(i)
        cols = graph.column_pairs(i)
        own = graph.self_pair(i)
        off = cols[cols != own]
        out.lam[i] = dist.draw(rng, d)
        out.R[rows] = dist.draw(rng, (rows.size, d))
        out.A[rows] = dist.draw(rng, (rows.size, d))
        out.C[off] = dist.draw(rng, (off.size, d))
        out.B[off] = dist.draw(rng, (off.size, d))
        out.C[own] = 1.0 - out.C[off].sum(axis=0)
        out.B[own] = 1.0 - out.B[off].sum(axis=0)
    return out


class StochasticDraws:
    """Uniform draws for the stochastic phase, generated in per-node blocks of iterations.

    Row ``k mod chunk`` of node ``i``'s block ``k // chunk`` comes from a
    generator seeded with ``(seed, i, k // chunk, 1)``, so every value is still a
    pure function of ``(seed, k, node)`` while generator construction is
    amortized over ``chunk`` iterations.
    """

    def __init__(self, seed: int, chunk: int = 256):
        self.seed = int(seed) % 2**64
        self.chunk = int(chunk)
        self._cache: dict[int, tuple[int, np.ndarray]] = {}
        self._network: dict[tuple[int, ...], tuple[int, np.ndarray]] = {}

    def _block(self, block: int, node: int, width: int) -> np.ndarray:
        hit = self._cache.get(node)
        if hit is None or hit[0] != block or hit[1].shape[1] != width:
            rng = np.random.default_rng([self.seed, int(node), block, 1])
            hit = (block, rng.random((self.chunk, width)))
            self._cache[node] = hit
        return hit[1]

    def row(self, k: int, node: int, width: int) -> np.ndarray:
        block, offset = divmod(int(k), self.chunk)
        return self._block(block, node, width)[offset]

    def network_block(self, block: int, widths: tuple[int, ...]) -> np.ndarray:
        """Rows of all nodes for iterations ``block*chunk .. (block+1)*chunk − 1``, node-major columns."""
        hit = self._network.get(widths)
        if hit is None or hit[0] != block:
            hit = (block, np.hstack([self._block(block, i, w) for i, w in enumerate(widths)]))
            self._network[widths] = hit
        return hit[1]

    def network_row(self, k: int, widths: tuple[int, ...]) -> np.ndarray:
        """All nodes' rows for iteration ``k`` concatenated in node order."""
        block, offset = divmod(int(k), self.chunk)
        return self.network_block(block, widths)[offset]


@dataclass(frozen=True, eq=False)
class _SimplexLayout:
    """Slot order of one node's stochastic draw: rows of ``R``, rows of ``A``, columns of ``C``, columns of ``B``."""

    widths: tuple[int, ...]
    family: np.ndarray
    pair: np.ndarray
    group: np.ndarray
    size: np.ndarray
    gather: tuple[np.ndarray, ...]
    starts: np.ndarray


_LAYOUTS: dict[str, _SimplexLayout] = {}


def _layout(graph: DirectedGraph) -> _SimplexLayout:
    key = graph.digest()
    if key in _LAYOUTS:
        return _LAYOUTS[key]
    family, pair, group, size, widths = [], [], [], [], []
    for i in range(graph.n):
        blocks = (graph.row_pairs(i), graph.row_pairs(i), graph.column_pairs(i), graph.column_pairs(i))
        for f, pairs in enumerate(blocks):
            family += [f] * pairs.size
            pair += list(pairs)
            group += [4 * i + f] * pairs.size
            size += [pairs.size] * pairs.size
        widths.append(sum(p.size for p in blocks))
    family_arr = np.array(family)
    pair_arr = np.array(pair, dtype=np.intp)
    # Each family covers every pair exactly once; gather[f][p] is the slot for pair p.
    gather = []
    for f in range(4):
        slots = np.flatnonzero(family_arr == f)
        g = np.empty(graph.num_pairs, dtype=np.intp)
        g[pair_arr[slots]] = slots
        gather.append(g)
    layout = _SimplexLayout(
        tuple(widths),
        family_arr,
        pair_arr,
        np.array(group, dtype=np.intp),
        np.array(size, dtype=float),
        tuple(gather),
        # groups occupy contiguous slots in increasing id order
        np.searchsorted(np.array(group, dtype=np.intp), np.arange(4 * graph.n)),
    )
    _LAYOUTS[key] = layout
    return layout


def sample_stochastic(
    k: int,
    graph: DirectedGraph,
    d: int,
    config: ScheduleConfig,
    stream: StreamFactory | None = None,
    draws: StochasticDraws | None = None,
) -> IterationParameters:
    """Draw a stochastic-phase iteration: uniform draws fed to :func:`normalize_simplex`.

    Each node draws one vector covering its rows of ``R, A`` and its columns of
    ``C, B``. With ``stream`` the vector comes from ``stream(k, i)``; otherwise
    from ``draws`` (a fresh :class:`StochasticDraws` for ``config.seed`` if omitted).
    The normalization is applied to all nodes at once.
    """
    if k < config.K:
        raise ValueError(f"iteration {k} is in the private phase (K={config.K})")
    lay = _layout(graph)
    if np.any(lay.size * config.eta > 1.0 + _SIMPLEX_SLACK):
        raise EmptySimplex(f"a node has more than 1/η = {1 / config.eta:.3g} weights in one family")
    if stream is not None:
        u = np.concatenate([stream(k, i).random(w) for i, w in enumerate(lay.widths)])
    else:
        draws = draws if draws is not None else StochasticDraws(config.seed)
        u = draws.network_row(k, lay.widths)
    c = _normalize_rows(u[None, :], lay, config.eta)[0]
    return _assemble(k, c, lay, graph.n, d, config.lam)


def _normalize_rows(u: np.ndarray, lay: _SimplexLayout, eta: float) -> np.ndarray:
    """Vectorized :func:`normalize_simplex` over every group of every row of ``u``."""
    sums = np.add.reduceat(u, lay.starts, axis=1)[:, lay.group]
    m = lay.size
    return (1.0 - m * eta) * ((1.0 - eta) * u + eta) / ((1.0 - eta) * sums + m * eta) + eta


def _assemble(k: int, c: np.ndarray, lay: _SimplexLayout, n: int, d: int, lam: float) -> IterationParameters:
    R, A, C, B = (np.repeat(c[g][:, None], d, axis=1) for g in lay.gather)
    return IterationParameters(k=k, lam=np.full((n, d), float(lam)), R=R, A=A, C=C, B=B)


def _sums(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    return np.stack([np.bincount(index, weights=values[:, l], minlength=n) for l in range(values.shape[1])], axis=1)


def validate(
    params: IterationParameters,
    phase: str,
    graph: DirectedGraph,
    config: ScheduleConfig,
    tol: float = 1e-12,
) -> list[Violation]:
    """List every constraint of the given phase that ``params`` violates.

    Args:
        phase: ``"private"`` or ``"stochastic"``.
        tol: Absolute slack for sums and range bounds.

    Returns:
        Violations; empty means compliant.
    """
    if phase not in ("private", "stochastic"):
        raise ValueError(f"unknown phase {phase!r}")
    n, P = graph.n, graph.num_pairs
    d = params.lam.shape[1] if params.lam.ndim == 2 else 0
    report: list[Violation] = []
    expected = {"lam": (n, d), "R": (P, d), "A": (P, d), "C": (P, d), "B": (P, d)}
    for name, shape in expected.items():
        arr = params.family(name)
        if arr.shape != shape:
            report.append(Violation("StructureViolation", name, -1, -1, float("nan"), f"shape {arr.shape} != {shape}"))
    if report:
        return report
    for name in FAMILIES:
        bad = np.argwhere(~np.isfinite(params.family(name)))
        for row, l in bad:
            node = row if name == "lam" else int(graph.pairs[row, 0])
            report.append(Violation("NonFiniteViolation", name, node, int(l), float("inf")))

    def stochastic(name: str, by: str) -> None:
        index = graph.senders if by == "column" else graph.receivers
        sums = _sums(params.family(name), index, n)
        for node, l in np.argwhere(np.abs(sums - 1.0) > tol):
            report.append(
                Violation("StochasticityViolation", name, int(node), int(l), float(sums[node, l] - 1.0), f"{by} sum")
            )

    stochastic("C", "column")
    stochastic("B", "column")
    if phase == "private":
        return report

    stochastic("R", "row")
    stochastic("A", "row")
    for name in ("R", "A", "C", "B"):
        vals = params.family(name)
        owner = graph.receivers if name in ("R", "A") else graph.senders
        spread = np.ptp(vals, axis=1)
        for p in np.flatnonzero(spread > tol):
            report.append(Violation("ScalarBlockViolation", name, int(owner[p]), -1, float(spread[p])))
        low = vals < config.eta - tol
        high = vals > 1.0 + tol
        for p, l in np.argwhere(low | high):
            v = vals[p, l]
            mag = config.eta - v if v < config.eta else v - 1.0
            report.append(
                Violation("RangeViolation", name, int(owner[p]), int(l), float(mag), f"pair {tuple(graph.pairs[p] + 1)}")
            )
    dev = np.abs(params.lam - config.lam)
    for i, l in np.argwhere(dev > tol):
        report.append(Violation("StepsizeViolation", "lam", int(i), int(l), float(dev[i, l])))
    return report


class TableIISchedule:
    """The randomized two-phase schedule; ``params(k)`` is a pure function of ``k``."""

    def __init__(self, graph: DirectedGraph, d: int, config: ScheduleConfig, stream: StreamFactory | None = None):
        config.check_graph(graph)
        self.graph = graph
        self.d = d
        self.config = config
        self.stream = stream
        self._draws = StochasticDraws(config.seed)
        self._block: tuple[int, tuple[np.ndarray, ...]] | None = None
        self._lam = np.full((graph.n, d), float(config.lam))
        self._lam.setflags(write=False)

    @property
    def K(self) -> int:
        return self.config.K

    def params(self, k: int) -> IterationParameters:
        if k < self.config.K:
            return sample_private(k, self.graph, self.d, self.config, self.stream)
        if self.stream is not None:
            return sample_stochastic(k, self.graph, self.d, self.config, self.stream)
        # Same values as sample_stochastic, normalized one chunk of iterations at a time.
        block, offset = divmod(int(k), self._draws.chunk)
        if self._block is None or self._block[0] != block:
            self._block = (block, self._chunk_families(block))
        fams = self._block[1]
        return IterationParameters(k=k, lam=self._lam, R=fams[0][offset], A=fams[1][offset], C=fams[2][offset], B=fams[3][offset])

    def _chunk_families(self, block: int) -> tuple[np.ndarray, ...]:
        lay = _layout(self.graph)
        if np.any(lay.size * self.config.eta > 1.0 + _SIMPLEX_SLACK):
            raise EmptySimplex(f"a node has more than 1/η = {1 / self.config.eta:.3g} weights in one family")
        c = _normalize_rows(self._draws.network_block(block, lay.widths), lay, self.config.eta)
        fams = tuple(np.repeat(c[:, g, None], self.d, axis=2) for g in lay.gather)
        for f in fams:
            f.setflags(write=False)
        return fams

    def describe(self) -> dict:
        return {"type": "tableII", **self.config.to_dict()}


class ExplicitSchedule:
    """A finite list of parameters, e.g. read back from a trace or built for replay."""

    def __init__(self, params: Sequence[IterationParameters], K: int = 0):
        self._params = list(params)
        self.K = K

    def params(self, k: int) -> IterationParameters:
        return self._params[k]

    def __len__(self) -> int:
        return len(self._params)

    def describe(self) -> dict:
        return {"type": "explicit", "length": len(self._params), "K": self.K}
