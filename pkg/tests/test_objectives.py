import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynpriv.errors import DimensionMismatch, SingularGlobalHessian
from dynpriv.objectives import estimation_suite, random_estimation_suite, rendezvous_suite, shifted_suite


def test_rendezvous_pair():
    s = rendezvous_suite([[0.0], [4.0]])
    np.testing.assert_allclose(s.x_star, [2.0])
    np.testing.assert_allclose(s.objectives[0].grad(s.x_star), [2.0])
    assert s.alpha_F == 2.0 and s.beta_F == 2.0 and s.beta_bar == 1.0


def test_rendezvous_single_and_centroid():
    s = rendezvous_suite([[5.0]])
    np.testing.assert_allclose(s.x_star, [5.0])
    assert s.value(s.x_star) == 0.0
    s = rendezvous_suite([[0, 0], [2, 0], [1, 3]])
    np.testing.assert_allclose(s.x_star, [1.0, 1.0])


def test_rendezvous_ragged_positions_rejected():
    with pytest.raises((DimensionMismatch, ValueError)):
        rendezvous_suite([[0.0, 1.0], [2.0]])


def test_scalar_least_squares():
    s = estimation_suite([[[1.0]]], [[3.0]], [0.0])
    np.testing.assert_allclose(s.x_star, [3.0])
    assert s.objectives[0].beta == pytest.approx(2.0)
    assert s.alpha_F == pytest.approx(2.0)
    s = estimation_suite([[[1.0]], [[1.0]]], [[0.0], [4.0]], [0.0, 0.0])
    np.testing.assert_allclose(s.x_star, [2.0])


def test_singular_global_hessian():
    with pytest.raises(SingularGlobalHessian):
        estimation_suite([[[1.0, 0.0]], [[2.0, 0.0]]], [[1.0], [1.0]], [0.0, 0.0])


def test_estimation_gradients_match_central_differences():
    s = random_estimation_suite(5, d=2, s=3, sigma=0.1, seed=3)
    r = np.random.default_rng(0)
    h = 1e-5
    for _ in range(10):
        x = r.normal(size=2) * 3
        for o in s.objectives:
            fd = np.array([(o.value(x + h * e) - o.value(x - h * e)) / (2 * h) for e in np.eye(2)])
            g = o.grad(x)
            assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_batched_gradients_match_per_objective():
    s = random_estimation_suite(7, d=3, s=2, seed=1)
    X = np.random.default_rng(2).normal(size=(7, 3))
    per = np.stack([o.grad(X[i]) for i, o in enumerate(s.objectives)])
    np.testing.assert_allclose(s.gradients(X), per, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 3))
def test_suite_invariants(seed, n, d):
    s = random_estimation_suite(n, d=d, s=d + 1, sigma=0.1, seed=seed)
    r = np.random.default_rng(seed)
    assert s.alpha_F <= s.beta_F * (1 + 1e-12)
    assert s.beta_F == pytest.approx(sum(o.beta for o in s.objectives))
    assert s.beta_bar == max(o.beta for o in s.objectives)
    xs = s.x_star
    assert np.linalg.norm(s.global_gradient(xs)) <= 1e-10 * (1 + s.beta_F * np.linalg.norm(xs))
    for o in s.objectives:
        x, hvec = r.normal(size=d), r.normal(size=d)
        gap = o.value(x + hvec) - o.value(x) - o.grad(x) @ hvec
        assert -1e-9 <= gap <= o.beta / 2 * hvec @ hvec + 1e-9
    x, x2 = r.normal(size=d), r.normal(size=d)
    lhs = (s.global_gradient(x) - s.global_gradient(x2)) @ (x - x2)
    assert lhs >= s.alpha_F * np.sum((x - x2) ** 2) * (1 - 1e-9)


def test_shifted_suite_moves_two_gradients():
    s = rendezvous_suite([[1.0], [3.0], [8.0]])
    t = shifted_suite(s, 0, 1, [5.0])
    x = np.array([[0.3], [-2.0], [4.0]])
    diff = t.gradients(x) - s.gradients(x)
    np.testing.assert_allclose(diff, [[5.0], [-5.0], [0.0]])
    np.testing.assert_allclose(t.x_star, s.x_star)
