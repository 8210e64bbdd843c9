"""Local objectives ``f_i`` and suites of them with a global optimum oracle."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from dynpriv.errors import DimensionMismatch, SingularGlobalHessian

__all__ = [
    "Objective",
    "QuadraticObjective",
    "ObjectiveSuite",
    "rendezvous_suite",
    "estimation_suite",
    "random_estimation_suite",
    "shifted_suite",
]


class Objective:
    """Differentiable convex ``f: R^d -> R`` with a smoothness constant.

    This is the generic hook: arbitrary callables, no optimum oracle.
    """

    def __init__(self, dim: int, value: Callable, grad: Callable, beta: float):
        self.dim = int(dim)
        self._value = value
        self._grad = grad
        self.beta = float(beta)

    def value(self, x: np.ndarray) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)


class QuadraticObjective(Objective):
    """``f(x) = ½ xᵀHx + gᵀx + c`` with symmetric PSD ``H``."""

    def __init__(self, hessian: np.ndarray, linear: np.ndarray, const: float = 0.0):
        hessian = np.asarray(hessian, dtype=float)
        linear = np.asarray(linear, dtype=float)
        d = linear.shape[0]
        if hessian.shape != (d, d):
            raise DimensionMismatch(f"hessian shape {hessian.shape} vs linear term of size {d}")
        self.hessian = hessian
        self.linear = linear
        self.const = float(const)
        self.dim = d
        self.beta = float(np.linalg.eigvalsh(hessian)[-1])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x + self.const)

    def grad(self, x):
        return self.hessian @ np.asarray(x, dtype=float) + self.linear


class _Rendezvous(QuadraticObjective):
    def __init__(self, position: np.ndarray):
        p = np.asarray(position, dtype=float)
        super().__init__(np.eye(p.size), -p, 0.5 * float(p @ p))
        self.position = p
        self.beta = 1.0

    def grad(self, x):
        return np.asarray(x, dtype=float) - self.position


class _Estimation(QuadraticObjective):
    def __init__(self, Q: np.ndarray, z: np.ndarray, sigma: float):
        Q = np.asarray(Q, dtype=float)
        z = np.asarray(z, dtype=float)
        d = Q.shape[1]
        super().__init__(2.0 * (Q.T @ Q + sigma * np.eye(d)), -2.0 * Q.T @ z, float(z @ z))
        self.Q, self.z, self.sigma = Q, z, float(sigma)
        self.beta = 2.0 * (float(np.linalg.eigvalsh(Q.T @ Q)[-1]) + self.sigma)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        r = self.z - self.Q @ x
        return float(r @ r + self.sigma * x @ x)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * self.Q.T @ (self.Q @ x - self.z) + 2.0 * self.sigma * x


@dataclass(frozen=True, eq=False)
class ObjectiveSuite:
    """The ``n`` local objectives plus global constants.

    Attributes:
        objectives: One objective per node.
        alpha_F: Strong convexity modulus of ``F = Σ f_i``.
        x_star: Global minimizer, or ``None`` for suites without an oracle.
        kind: Short tag used in metadata ("rendezvous", "estimation", ...).
    """

    objectives: tuple[Objective, ...]
    alpha_F: float
    x_star: np.ndarray | None = None
    kind: str = "generic"

    @property
    def n(self) -> int:
        return len(self.objectives)

    @property
    def dim(self) -> int:
        return self.objectives[0].dim

    @property
    def betas(self) -> np.ndarray:
        return np.array([o.beta for o in self.objectives])

    @property
    def beta_F(self) -> float:
        return float(np.sum(self.betas))

    @property
    def beta_bar(self) -> float:
        return float(np.max(self.betas))

    def value(self, x: np.ndarray) -> float:
        return sum(o.value(x) for o in self.objectives)

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.sum([o.grad(x) for o in self.objectives], axis=0)

    @cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray] | None:
        if all(isinstance(o, QuadraticObjective) for o in self.objectives):
            return np.stack([o.hessian for o in self.objectives]), np.stack([o.linear for o in self.objectives])
        return None

    def gradients(self, X: np.ndarray) -> np.ndarray:
        """Row ``i`` is ``∇f_i(X[i])``; ``X`` has shape ``(n, d)``.

        Quadratic suites are evaluated in one batched product.
        """
        stacked = self._stacked
        if stacked is not None:
            H, g = stacked
            return np.einsum("nij,nj->ni", H, X) + g
        return np.stack([o.grad(X[i]) for i, o in enumerate(self.objectives)])


@dataclass(frozen=True, eq=False)
class _ShiftedSuite(ObjectiveSuite):
    base: ObjectiveSuite | None = None
    delta: np.ndarray | None = None
    plus: int = -1
    minus: int = -1

    def gradients(self, X):
        G = self.base.gradients(X)
        G[self.plus] = G[self.plus] + self.delta
        G[self.minus] = G[self.minus] - self.delta
        return G


def _check_positive(alpha: float) -> None:
    if not alpha > 0.0:
        raise SingularGlobalHessian(f"global Hessian not positive definite (alpha_F={alpha:.3e})")


def rendezvous_suite(positions: Sequence[Sequence[float]] | np.ndarray) -> ObjectiveSuite:
    """``f_i(x) = ½‖x − p_i‖²``; optimum is the centroid of the positions."""
    P = np.asarray(positions, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise DimensionMismatch(f"positions must be an (n, d) array, got shape {P.shape}")
    objectives = tuple(_Rendezvous(p) for p in P)
    return ObjectiveSuite(objectives, alpha_F=float(len(P)), x_star=P.mean(axis=0), kind="rendezvous")


def estimation_suite(Qs, zs, sigmas) -> ObjectiveSuite:
    """``f_i(x) = ‖z_i − Q_i x‖² + σ_i‖x‖²`` (distributed estimation)."""
    Qs = [np.atleast_2d(np.asarray(Q, dtype=float)) for Q in Qs]
    zs = [np.atleast_1d(np.asarray(z, dtype=float)) for z in zs]
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (len(Qs),))
    if not (len(Qs) == len(zs) >= 1):
        raise DimensionMismatch("need the same positive number of Q_i and z_i")
    s, d = Qs[0].shape
    for Q, z in zip(Qs, zs):
        if Q.shape != (s, d) or z.shape != (s,):
            raise DimensionMismatch(f"expected Q_i {(s, d)} and z_i {(s,)}, got {Q.shape} and {z.shape}")
    if np.any(sigmas < 0):
        raise ValueError("sigma_i must be nonnegative")

    normal = sum(Q.T @ Q + sg * np.eye(d) for Q, sg in zip(Qs, sigmas))
    alpha = 2.0 * float(np.linalg.eigvalsh(normal)[0])
    _check_positive(alpha)
    rhs = sum(Q.T @ z for Q, z in zip(Qs, zs))
    x_star = np.linalg.solve(normal, rhs)
    objectives = tuple(_Estimation(Q, z, sg) for Q, z, sg in zip(Qs, zs, sigmas))
    return ObjectiveSuite(objectives, alpha_F=alpha, x_star=x_star, kind="estimation")


def random_estimation_suite(n: int, d: int = 2, s: int = 3, sigma: float = 0.1, seed: int = 0) -> ObjectiveSuite:
    """Estimation suite with i.i.d. standard normal ``Q_i`` and ``z_i``."""
    rng = np.random.default_rng(seed)
    Qs = rng.standard_normal((n, s, d))
    zs = rng.standard_normal((n, s))
    return estimation_suite(list(Qs), list(zs), np.full(n, sigma))


def shifted_suite(suite: ObjectiveSuite, plus: int, minus: int, delta) -> ObjectiveSuite:
    """Suite with ``∇f_plus + δ`` and ``∇f_minus − δ``; the global optimum is unchanged."""
    delta = np.asarray(delta, dtype=float).reshape(suite.dim)
    objs = list(suite.objectives)
    for idx, sign in ((plus, 1.0), (minus, -1.0)):
        base = objs[idx]
        shift = sign * delta
        objs[idx] = Objective(
            base.dim,
            value=lambda x, b=base, s=shift: b.value(x) + float(s @ x),
            grad=lambda x, b=base, s=shift: b.grad(x) + s,
            beta=base.beta,
        )
    return _ShiftedSuite(
        tuple(objs),
        alpha_F=suite.alpha_F,
        x_star=suite.x_star,
        kind=f"shifted-{suite.kind}",
        base=suite,
        delta=delta,
        plus=plus,
        minus=minus,
    )
