import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import strongly_connected_graphs
from dynpriv.errors import EmptySimplex
from dynpriv.graph import build_graph, cycle3, fig1b
from dynpriv.weights import (
    Distribution,
    ScheduleConfig,
    StochasticDraws,
    TableIISchedule,
    node_stream,
    normalize_simplex,
    sample_private,
    sample_stochastic,
    validate,
)


class _Uniforms:
    """Adapter exposing chunked draws through the ``stream(k, i)`` interface."""

    def __init__(self, seed, k, i):
        self.args = (seed, k, i)

    def random(self, width):
        seed, k, i = self.args
        return StochasticDraws(seed).row(k, i, width)


def test_normalize_simplex_examples():
    np.testing.assert_allclose(normalize_simplex([0.5, 0.5], 0.1), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(normalize_simplex([1.0, 0.0], 0.1), [0.8 / 1.1 + 0.1, 0.08 / 1.1 + 0.1], atol=1e-15)
    np.testing.assert_allclose(normalize_simplex([0.3], 0.5), [1.0], atol=1e-15)
    with pytest.raises(EmptySimplex):
        normalize_simplex([0.2, 0.3, 0.4], 0.4)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(1e-3, 0.1))
def test_normalize_simplex_lands_in_simplex(p, eta):
    c = normalize_simplex(p, eta)
    assert abs(c.sum() - 1.0) <= 1e-12
    assert np.all(c >= eta - 1e-15) and np.all(c <= 1.0 + 1e-15)


def test_private_single_node_is_identity():
    p = sample_private(0, build_graph(1, []), 2, ScheduleConfig(K=1))
    np.testing.assert_array_equal(p.C, np.ones((1, 2)))
    np.testing.assert_array_equal(p.B, np.ones((1, 2)))


def test_private_columns_sum_to_one():
    g = cycle3()
    cfg = ScheduleConfig(K=5, seed=11)
    for k in range(5):
        p = sample_private(k, g, 2, cfg)
        for name in ("C", "B"):
            sums = np.zeros((3, 2))
            np.add.at(sums, g.senders, p.family(name))
            np.testing.assert_allclose(sums, 1.0, atol=1e-14)
        assert validate(p, "private", g, cfg) == []


def test_private_phase_accepts_negative_and_zero_weights():
    g = cycle3()
    cfg = ScheduleConfig(K=1)
    p = sample_private(0, g, 1, cfg).copy()
    p.R[0] = -3.0
    p.A[1] = 0.0
    p.lam[2] = -1.0
    assert validate(p, "private", g, cfg) == []


def test_private_distribution_kinds():
    g = cycle3()
    for dist in (Distribution("laplace", 0, 2), Distribution("uniform", -1, 1)):
        cfg = ScheduleConfig(K=1, distribution=dist)
        assert validate(sample_private(0, g, 1, cfg), "private", g, cfg) == []
    p = sample_private(0, g, 1, ScheduleConfig(K=1, distribution=Distribution("uniform", -1, 1)))
    assert np.all(np.abs(p.R) <= 1)


def test_stochastic_fig1b_example():
    g = fig1b()
    cfg = ScheduleConfig(K=3, eta=0.1, lam=0.06)
    p = sample_stochastic(3, g, 2, cfg)
    assert validate(p, "stochastic", g, cfg) == []
    np.testing.assert_array_equal(p.lam, 0.06)
    R = p.scalar_matrix("R", g)
    C = p.scalar_matrix("C", g)
    np.testing.assert_allclose(R.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(C.sum(axis=0), 1.0, atol=1e-12)
    assert R[R > 0].min() >= 0.1 - 1e-15


def test_validate_flags_single_range_violation():
    g = cycle3()
    cfg = ScheduleConfig(K=0, eta=0.1)
    p = sample_stochastic(0, g, 1, cfg).copy()
    own = g.self_pair(0)
    other = g.row_pairs(0)[g.row_pairs(0) != own][0]
    moved = p.R[other, 0] - 0.05
    p.R[other] = 0.05
    p.R[own] = p.R[own] + moved
    report = validate(p, "stochastic", g, cfg)
    assert [v.kind for v in report] == ["RangeViolation"]
    assert report[0].family == "R" and report[0].node == 0


def test_validate_flags_column_sum():
    g = cycle3()
    cfg = ScheduleConfig(K=1)
    p = sample_private(0, g, 1, cfg).copy()
    p.C[g.self_pair(1)] -= 0.1
    report = validate(p, "private", g, cfg)
    assert [v.kind for v in report] == ["StochasticityViolation"]
    assert report[0].node == 1 and report[0].magnitude == pytest.approx(-0.1)


def test_empty_simplex_guard():
    g = build_graph(4, [(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)])
    with pytest.raises(EmptySimplex):
        TableIISchedule(g, 1, ScheduleConfig(eta=0.3))


def test_sampling_is_deterministic():
    g = fig1b()
    cfg = ScheduleConfig(K=2, seed=5)
    for k in (0, 1, 2, 300):
        a = TableIISchedule(g, 2, cfg).params(k)
        b = TableIISchedule(g, 2, cfg).params(k)
        for f in ("lam", "R", "A", "C", "B"):
            np.testing.assert_array_equal(a.family(f), b.family(f))


def test_chunked_schedule_equals_direct_sampler():
    g = fig1b()
    cfg = ScheduleConfig(K=3, seed=9)
    sched = TableIISchedule(g, 2, cfg)
    for k in (3, 255, 256, 257, 1000, 4):
        direct = sample_stochastic(k, g, 2, cfg)
        via_stream = sample_stochastic(k, g, 2, cfg, stream=lambda kk, i: _Uniforms(9, kk, i))
        for f in ("R", "A", "C", "B"):
            np.testing.assert_array_equal(sched.params(k).family(f), direct.family(f))
            np.testing.assert_array_equal(via_stream.family(f), direct.family(f))


def _owned(g, i):
    rows = set(g.row_pairs(i).tolist())
    cols = set(g.column_pairs(i).tolist())
    return rows, cols


@pytest.mark.parametrize("phase_k, K", [(0, 2), (5, 2)])
def test_locality_under_stream_substitution(phase_k, K):
    g = fig1b()
    cfg = ScheduleConfig(K=K, seed=4)
    target = 2

    def base(k, i):
        return node_stream(4, k, i)

    def swapped(k, i):
        return node_stream(999, k, i) if i == target else node_stream(4, k, i)

    sampler = sample_private if phase_k < K else sample_stochastic
    a = sampler(phase_k, g, 1, cfg, base)
    b = sampler(phase_k, g, 1, cfg, swapped)
    rows, cols = _owned(g, target)
    for f, owned in (("R", rows), ("A", rows), ("C", cols), ("B", cols)):
        changed = set(np.flatnonzero(np.any(a.family(f) != b.family(f), axis=1)).tolist())
        assert changed and changed <= owned, f
    lam_changed = np.flatnonzero(np.any(a.lam != b.lam, axis=1)).tolist()
    assert lam_changed == ([target] if phase_k < K else [])


@given(strongly_connected_graphs(max_n=6, max_degree=4), st.integers(0, 2**32), st.integers(1, 3))
def test_sampled_iterations_validate_in_both_phases(g, seed, d):
    cfg = ScheduleConfig(K=3, eta=0.1, lam=0.05, seed=seed)
    sched = TableIISchedule(g, d, cfg)
    for k in range(8):
        phase = "private" if k < cfg.K else "stochastic"
        assert validate(sched.params(k), phase, g, cfg) == []
