"""Directed communication topologies.

An edge ``(i, j)`` means node ``j`` can send to node ``i``. Nodes are 0-based
internally; anything printed for a user is 1-based.
"""

from __future__ import annotations

import hashlib
import re
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from dynpriv.errors import DuplicateEdge, IndexOutOfRange, NotStronglyConnected, SelfEdge, TooSmall

__all__ = [
    "DirectedGraph",
    "build_graph",
    "ring_graph",
    "parse_arrows",
    "cycle3",
    "fig1b",
]


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Immutable strongly connected digraph with precomputed neighbor indexing.

    Besides neighbor sets, the graph fixes an ordering of *pairs*
    ``(receiver, sender)`` covering every edge plus one self pair per node.
    All per-iteration weights are stored against this ordering, so a weight
    family is an array of shape ``(num_pairs, d)`` rather than a dense block
    matrix.

    Attributes:
        n: Number of nodes.
        edges: Frozen set of ``(i, j)`` with ``j -> i``.
        pairs: ``(P, 2)`` int array of ``(receiver, sender)``, sorted.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    pairs: np.ndarray = field(repr=False)
    _in: tuple[tuple[int, ...], ...] = field(repr=False)
    _out: tuple[tuple[int, ...], ...] = field(repr=False)
    _pair_index: dict[tuple[int, int], int] = field(repr=False)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def receivers(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def senders(self) -> np.ndarray:
        return self.pairs[:, 1]

    def flat_receivers(self, d: int) -> np.ndarray:
        """Index ``receiver * d + l`` for every entry of a ``(P, d)`` pair array, flattened."""
        idx = self._flat.get(d)
        if idx is None:
            idx = (self.pairs[:, 0, None] * d + np.arange(d)).ravel()
            idx.setflags(write=False)
            self._flat[d] = idx
        return idx

    @cached_property
    def _flat(self) -> dict[int, np.ndarray]:
        return {}

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        return self._in[i]

    def out_neighbors(self, j: int) -> tuple[int, ...]:
        return self._out[j]

    def neighbors(self, i: int) -> frozenset[int]:
        """``N_i^in ∪ N_i^out``."""
        return frozenset(self._in[i]) | frozenset(self._out[i])

    def max_out_degree(self) -> int:
        return max(len(o) for o in self._out)

    def max_in_degree(self) -> int:
        return max(len(o) for o in self._in)

    def pair_index(self, receiver: int, sender: int) -> int:
        return self._pair_index[(receiver, sender)]

    def has_pair(self, receiver: int, sender: int) -> bool:
        return (receiver, sender) in self._pair_index

    def row_pairs(self, i: int) -> np.ndarray:
        """Pair indices ``(i, j)`` for ``j ∈ N_i^in ∪ {i}``, ordered by sender."""
        return np.array([self._pair_index[(i, j)] for j in sorted((*self._in[i], i))], dtype=np.intp)

    def column_pairs(self, j: int) -> np.ndarray:
        """Pair indices ``(i, j)`` for ``i ∈ N_j^out ∪ {j}``, ordered by receiver."""
        return np.array([self._pair_index[(i, j)] for i in sorted((*self._out[j], j))], dtype=np.intp)

    def self_pair(self, i: int) -> int:
        return self._pair_index[(i, i)]

    def adjacency(self) -> np.ndarray:
        """``n x n`` 0/1 matrix with ones on edges and the diagonal."""
        a = np.eye(self.n)
        for i, j in self.edges:
            a[i, j] = 1.0
        return a

    def digest(self) -> str:
        return self._digest

    @cached_property
    def _digest(self) -> str:
        text = f"{self.n}:" + ";".join(f"{i},{j}" for i, j in sorted(self.edges))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def arrows(self) -> list[str]:
        """Edges as 1-based ``"j -> i"`` strings."""
        return [f"{j + 1} -> {i + 1}" for i, j in sorted(self.edges, key=lambda e: (e[1], e[0]))]

    def reachable_from(self, source: int) -> set[int]:
        seen = {source}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self._out[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen


def build_graph(n: int, edges: Iterable[tuple[int, int]]) -> DirectedGraph:
    """Validate and index a digraph given 0-based ``(i, j)`` pairs (``j -> i``).

    Raises:
        SelfEdge, DuplicateEdge, IndexOutOfRange: malformed edge list.
        NotStronglyConnected: some ordered pair has no directed path.
    """
    if n < 1:
        raise TooSmall(f"need at least one node, got n={n}")
    edge_list = [(int(i), int(j)) for i, j in edges]
    edge_set: set[tuple[int, int]] = set()
    for i, j in edge_list:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside 0..{n - 1}")
        if i == j:
            raise SelfEdge(f"self edge at node {i + 1}")
        if (i, j) in edge_set:
            raise DuplicateEdge(f"duplicate edge {j + 1} -> {i + 1}")
        edge_set.add((i, j))

    in_nb = [[] for _ in range(n)]
    out_nb = [[] for _ in range(n)]
    for i, j in sorted(edge_set):
        in_nb[i].append(j)
        out_nb[j].append(i)

    pairs = sorted(edge_set | {(i, i) for i in range(n)})
    graph = DirectedGraph(
        n=n,
        edges=frozenset(edge_set),
        pairs=np.array(pairs, dtype=np.intp).reshape(-1, 2),
        _in=tuple(tuple(sorted(v)) for v in in_nb),
        _out=tuple(tuple(sorted(v)) for v in out_nb),
        _pair_index={p: idx for idx, p in enumerate(pairs)},
    )
    graph.pairs.setflags(write=False)

    for s in range(n):
        seen = graph.reachable_from(s)
        if len(seen) < n:
            missing = min(set(range(n)) - seen)
            raise NotStronglyConnected(s, missing)
    return graph


def ring_graph(n: int) -> DirectedGraph:
    """Each node ``i`` sends to ``i+1`` and ``i+2`` (mod n)."""
    if n < 3:
        raise TooSmall(f"ring_graph needs n >= 3, got {n}")
    edges = [((i + s) % n, i) for i in range(n) for s in (1, 2)]
    return build_graph(n, edges)


_ARROW = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")


def parse_arrows(n: int, lines: Iterable[str] | str) -> DirectedGraph:
    """Build a graph from 1-based ``"j -> i"`` strings (one per line or list item)."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    edges = []
    for raw in lines:
        raw = raw.split("#", 1)[0]
        if not raw.strip():
            continue
        match = _ARROW.match(raw)
        if match is None:
            raise ValueError(f"cannot parse edge {raw!r}; expected 'j -> i'")
        j, i = int(match.group(1)) - 1, int(match.group(2)) - 1
        edges.append((i, j))
    return build_graph(n, edges)


def cycle3() -> DirectedGraph:
    """Directed 3-cycle 1 -> 2 -> 3 -> 1."""
    return parse_arrows(3, ["1 -> 2", "2 -> 3", "3 -> 1"])


# The published 5-node topology is only shown as a drawing; this stand-in keeps
# its stated properties (strongly connected, n = 5) and gives node 1 three
# distinct neighbors so both counterpart cases of the privacy construction and
# a two-node coalition can be exercised.
FIG1B_ARROWS = (
    "1 -> 2",
    "2 -> 3",
    "3 -> 4",
    "4 -> 5",
    "5 -> 1",
    "1 -> 3",
    "3 -> 1",
    "2 -> 5",
    "4 -> 2",
)


def fig1b() -> DirectedGraph:
    return parse_arrows(5, FIG1B_ARROWS)
