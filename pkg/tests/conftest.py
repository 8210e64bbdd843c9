"""Shared fixtures and hypothesis strategies."""

from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from dynpriv.graph import DirectedGraph, build_graph, cycle3, fig1b
from dynpriv.objectives import random_estimation_suite, rendezvous_suite

settings.register_profile(
    "default",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@st.composite
def strongly_connected_graphs(draw, min_n: int = 2, max_n: int = 7, max_degree: int | None = None) -> DirectedGraph:
    """A random Hamiltonian cycle plus random extra edges."""
    n = draw(st.integers(min_n, max_n))
    order = draw(st.permutations(list(range(n))))
    edges = {(order[(t + 1) % n], order[t]) for t in range(n)} if n > 1 else set()
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    for i, j in extra:
        if i == j:
            continue
        if max_degree is not None:
            indeg = sum(1 for a, _ in edges if a == i)
            outdeg = sum(1 for _, b in edges if b == j)
            if indeg >= max_degree or outdeg >= max_degree:
                continue
        edges.add((i, j))
    return build_graph(n, sorted(edges))


@pytest.fixture
def tri() -> DirectedGraph:
    return cycle3()


@pytest.fixture
def five() -> DirectedGraph:
    return fig1b()


@pytest.fixture
def tri_suite():
    return rendezvous_suite([[1.0], [3.0], [8.0]])


@pytest.fixture
def five_suite():
    return random_estimation_suite(5, d=2, s=3, sigma=0.1, seed=0)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
