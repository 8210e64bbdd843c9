import numpy as np
import pytest

from dynpriv.analysis import conservation_residual, fit_linear_rate
from dynpriv.engine import (
    default_weights,
    extra_equivalence_check,
    instantiate_preset,
    replay,
    run,
    state_from_x,
    step,
)
from dynpriv.errors import NonFiniteState, StochasticityViolation, WrongPreset
from dynpriv.graph import build_graph, cycle3, fig1b
from dynpriv.objectives import random_estimation_suite, rendezvous_suite
from dynpriv.weights import ExplicitSchedule, IterationParameters, ScheduleConfig, TableIISchedule, sample_private


def _ones(k, lam=0.5):
    one = np.ones((1, 1))
    return IterationParameters(k, lam * one, one.copy(), one.copy(), one.copy(), one.copy())


def test_single_node_reduces_to_gradient_descent():
    suite = rendezvous_suite([[1.0]])
    trace = run(suite, build_graph(1, []), ExplicitSchedule([_ones(0), _ones(1)]), 2, x0=[[0.0]])
    assert trace.x[1, 0, 0] == 0.5
    assert trace.y[1, 0, 0] == -0.5
    assert trace.x[2, 0, 0] == 0.75


def test_private_phase_conserves_tracker_sum():
    g, suite = fig1b(), random_estimation_suite(5, seed=2)
    cfg = ScheduleConfig(K=10, seed=2)
    state = state_from_x(suite, np.random.default_rng(0).uniform(-5, 5, (5, 2)))
    for k in range(10):
        new, _ = step(state, sample_private(k, g, 2, cfg), suite, g)
        lhs = new.y.sum(axis=0)
        rhs = state.y.sum(axis=0) + (new.grad - state.grad).sum(axis=0)
        scale = 1 + np.abs(state.y).sum() + np.abs(new.grad).sum() + np.abs(state.grad).sum()
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale
        state = new


def test_zero_gradients_keep_consensus():
    g = cycle3()
    suite = rendezvous_suite([[2.0, -1.0]] * 3)
    trace = run(suite, g, TableIISchedule(g, 2, ScheduleConfig(K=0)), 20, x0=np.tile([2.0, -1.0], (3, 1)))
    np.testing.assert_allclose(trace.y, 0.0, atol=1e-13)
    np.testing.assert_allclose(trace.x, np.broadcast_to([2.0, -1.0], trace.x.shape), atol=1e-15)


def test_fig1b_estimation_converges_linearly():
    g, suite = fig1b(), random_estimation_suite(5, seed=0)
    trace = run(suite, g, TableIISchedule(g, 2, ScheduleConfig(K=3, lam=0.06, seed=0)), 300, rng=0)
    assert trace.err[-1] < 1e-6
    fit = fit_linear_rate(trace.err, burn_in=4, stop=200)
    assert fit.rate < 1 and fit.goodness > 0.98


def test_rate_does_not_depend_on_K():
    g, suite = fig1b(), random_estimation_suite(5, seed=0)
    rates = []
    for K in (1, 3):
        trace = run(suite, g, TableIISchedule(g, 2, ScheduleConfig(K=K, lam=0.06, seed=0)), 200, rng=0)
        rates.append(fit_linear_rate(trace.err, burn_in=60, stop=160).rate)
    assert abs(np.log(rates[0]) / np.log(rates[1]) - 1) < 0.10


def test_run_is_deterministic_and_replayable():
    g, suite = fig1b(), random_estimation_suite(5, seed=1)
    sched = lambda: TableIISchedule(g, 2, ScheduleConfig(K=3, seed=7))
    a = run(suite, g, sched(), 50, rng=3)
    b = run(suite, g, sched(), 50, rng=3)
    c = replay(a)
    for other in (b, c):
        np.testing.assert_array_equal(a.x, other.x)
        np.testing.assert_array_equal(a.y, other.y)


def test_error_only_mode_matches_full_trace():
    g, suite = fig1b(), random_estimation_suite(5, seed=1)
    sched = lambda: TableIISchedule(g, 2, ScheduleConfig(K=3, seed=7))
    full = run(suite, g, sched(), 60, rng=3)
    lean = run(suite, g, sched(), 60, rng=3, keep_states=False)
    assert lean.T == 60 and not lean.states_kept and not lean.has_sidecar
    np.testing.assert_array_equal(full.err, lean.err)
    np.testing.assert_array_equal(full.x[-1], lean.x[-1])


def test_horizon_must_be_positive(tri_suite):
    with pytest.raises(ValueError):
        run(tri_suite, cycle3(), TableIISchedule(cycle3(), 1, ScheduleConfig()), 0)


def test_divergence_reports_iteration(tri_suite):
    g = cycle3()
    with pytest.raises(NonFiniteState) as info:
        run(tri_suite, g, TableIISchedule(g, 1, ScheduleConfig(K=0, lam=50.0)), 5000)
    assert 0 < info.value.k < 5000


def test_receivers_only_hear_in_neighbors(five_suite):
    g = fig1b()
    trace = run(five_suite, g, TableIISchedule(g, 2, ScheduleConfig(K=2)), 3)
    state = trace.state(0)
    _, msgs = step(state, trace.params[0], five_suite, g)
    for m in msgs.iter_wire(g):
        assert m.sender in g.in_neighbors(m.receiver)


def test_conservation_holds_along_trace(five_suite):
    g = fig1b()
    trace = run(five_suite, g, TableIISchedule(g, 2, ScheduleConfig(K=3)), 40)
    assert conservation_residual(trace, 0) == 0.0
    for k in range(41):
        scale = 1 + np.abs(trace.grad[k]).sum()
        assert conservation_residual(trace, k) <= 1e-10 * scale


# --- fixed-weight presets -------------------------------------------------------


def _grad(suite, X):
    return suite.gradients(X)


def test_ab_preset_matches_direct_recursion(tri_suite):
    g = cycle3()
    lam = 0.06
    trace = run(tri_suite, g, instantiate_preset("AB", g, 1, lam=lam), 100, rng=1)
    W = default_weights(g)
    R, C = W["R"], W["C"]
    x, y = trace.x[0].copy(), trace.y[0].copy()
    for k in range(100):
        g_old = _grad(tri_suite, x)
        x = R @ x - lam * y
        y = C @ (y + _grad(tri_suite, x) - g_old)
        assert np.max(np.abs(x - trace.x[k + 1])) <= 1e-12
        assert np.max(np.abs(y - trace.y[k + 1])) <= 1e-12


def test_diging_preset_matches_direct_recursion(five_suite):
    g = fig1b()
    lam = 0.02
    trace = run(five_suite, g, instantiate_preset("DIGing", g, 2, lam=lam), 100, rng=1)
    W = default_weights(g)["W"]
    np.testing.assert_allclose(W.sum(axis=0), 1)
    np.testing.assert_allclose(W.sum(axis=1), 1)
    x, y = trace.x[0].copy(), trace.y[0].copy()
    for k in range(100):
        g_old = _grad(five_suite, x)
        x = W @ x - lam * y
        y = W @ y + _grad(five_suite, x) - g_old
        assert np.max(np.abs(x - trace.x[k + 1])) <= 1e-12 * max(1, np.abs(x).max())
        assert np.max(np.abs(y - trace.y[k + 1])) <= 1e-12 * max(1, np.abs(y).max())


def test_preset_rejects_bad_weights():
    g = cycle3()
    C = default_weights(g)["C"]
    bad = C.copy()
    bad[0, 0] += 0.2  # still supported on the graph but rows no longer sum to 1
    with pytest.raises(StochasticityViolation) as info:
        instantiate_preset("AB", g, 1, R=bad)
    assert info.value.matrix == "R"
    with pytest.raises(KeyError):
        instantiate_preset("ADD-OPT", g, 1)


def test_extra_identity_holds():
    g = cycle3()
    suite = rendezvous_suite([[1.0, 0.0], [3.0, 2.0], [8.0, -1.0]])
    trace = run(suite, g, instantiate_preset("EXTRA", g, 2, lam=0.05), 50)
    assert extra_equivalence_check(trace) <= 1e-10
    one = run(rendezvous_suite([[2.0]]), build_graph(1, []), instantiate_preset("EXTRA", build_graph(1, []), 1, lam=0.3), 10)
    x, gr = one.x[:, 0, 0], one.grad[:, 0, 0]
    for k in range(1, 9):
        assert abs(x[k + 1] - (2 * x[k] - x[k - 1] - 0.3 * (gr[k] - gr[k - 1]))) <= 1e-12
    assert extra_equivalence_check(one) <= 1e-12


def test_extra_check_rejects_other_presets(tri_suite):
    g = cycle3()
    trace = run(tri_suite, g, instantiate_preset("AB", g, 1), 10)
    with pytest.raises(WrongPreset):
        extra_equivalence_check(trace)
