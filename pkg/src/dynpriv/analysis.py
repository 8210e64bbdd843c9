"""Post-hoc convergence analysis of recorded executions.

Covers the tracker conservation residual, the absolute probability sequences
``v^k`` (forward, for ``C̄``) and ``φ^k`` (backward, for ``R̄``), the transformed
matrices ``P̄^k``, the worst-case constants ``Q_R, Q_P, N_R, N_P``, the
``3N̄ x 3N̄`` comparison matrix ``M(λ)`` and least-squares rate fits.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import mpmath
import numpy as np

from dynpriv.engine import ExecutionTrace, Schedule
from dynpriv.errors import BufferTooShort, DimensionTooLarge, NonPositiveError, NotConvergedWarning, SeriesTooShort

__all__ = [
    "conservation_residual",
    "conservation_series",
    "absolute_probability_v",
    "PhiEstimate",
    "approx_phi",
    "phi_sequence",
    "p_matrix",
    "delta_bracket",
    "LemmaConstants",
    "lemma_constants",
    "ConvergenceMatrix",
    "build_M",
    "eigen_derivative",
    "certified_stepsize",
    "RateFit",
    "fit_linear_rate",
    "first_below",
    "Diagnostics",
    "diagnostics",
    "LemmaCheck",
    "lemma_checks",
]

DEFAULT_DIM_CAP = 3000


# --- conservation -------------------------------------------------------------


def conservation_residual(trace: ExecutionTrace, k: int) -> float:
    """``‖Σ_i (y_i^k − ∇f_i^k)‖``."""
    if not 0 <= k <= trace.T:
        raise IndexError(f"iteration {k} outside 0..{trace.T}")
    return float(np.linalg.norm((trace.y[k] - trace.grad[k]).sum(axis=0)))


def conservation_series(trace: ExecutionTrace, relative: bool = False) -> np.ndarray:
    """Residual for every ``k``; ``relative`` divides by ``1 + Σ_i ‖∇f_i^k‖``."""
    res = np.linalg.norm((trace.y - trace.grad).sum(axis=1), axis=1)
    if relative:
        res = res / (1.0 + np.linalg.norm(trace.grad, axis=2).sum(axis=1))
    return res


# --- absolute probability sequences -------------------------------------------


def _scalar(trace: ExecutionTrace, schedule: Schedule | None, family: str, k: int) -> np.ndarray:
    if k < trace.T and trace.params is not None:
        return trace.params[k].scalar_matrix(family, trace.graph)
    if schedule is not None:
        return schedule.params(k).scalar_matrix(family, trace.graph)
    raise BufferTooShort(f"parameters for iteration {k} are not available")


def absolute_probability_v(trace: ExecutionTrace, horizon: int | None = None) -> np.ndarray:
    """Rows are ``v^K, v^{K+1}, ..., v^horizon`` with ``v^{k+1} = C̄^k v^k``."""
    horizon = trace.T if horizon is None else horizon
    K, n = trace.K, trace.n
    V = np.empty((horizon - K + 1, n))
    V[0] = 1.0 / n
    for k in range(K, horizon):
        V[k - K + 1] = _scalar(trace, None, "C", k) @ V[k - K]
    return V


@dataclass(frozen=True)
class PhiEstimate:
    phi: np.ndarray
    truncation_error: float
    buffer: int


def _backward(trace: ExecutionTrace, schedule: Schedule | None, start: int, stop: int) -> np.ndarray:
    """``φ^stop`` from a uniform vector placed at ``start``."""
    phi = np.full(trace.n, 1.0 / trace.n)
    for t in range(start - 1, stop - 1, -1):
        phi = _scalar(trace, schedule, "R", t).T @ phi
    return phi


def approx_phi(
    trace: ExecutionTrace,
    k: int,
    L: int,
    tol: float | None = None,
    schedule: Schedule | None = None,
) -> PhiEstimate:
    """Truncated backward estimate of ``φ^k`` with ``(φ^k)ᵀ = (φ^{k+1})ᵀ R̄^k``.

    The truncation error is estimated as ``‖φ_L − φ_{L−⌈L/2⌉}‖_1``.

    Raises:
        BufferTooShort: parameters run out before ``k + L`` (pass ``schedule`` to
            extend past the trace) or the estimate exceeds ``tol``.
    """
    if k < trace.K:
        raise ValueError("φ is defined for the stochastic phase only")
    if L < 1:
        raise ValueError("buffer L must be positive")
    phi = _backward(trace, schedule, k + L, k)
    short = _backward(trace, schedule, k + L - math.ceil(L / 2), k)
    err = float(np.abs(phi - short).sum())
    if tol is not None and err > tol:
        raise BufferTooShort(f"truncation estimate {err:.2e} exceeds {tol:.1e} at L={L}")
    return PhiEstimate(phi, err, L)


def phi_sequence(
    trace: ExecutionTrace,
    L: int,
    schedule: Schedule | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """``φ^k`` for ``k = K..T`` from one backward sweep, with per-``k`` truncation estimates.

    The sweep starts from a uniform vector at ``T + L`` (parameters past the
    trace come from ``schedule``) or at ``T`` without a schedule. The estimate
    compares against a second sweep started ``⌈L/2⌉`` later; it is ``inf`` for
    iterations past that second anchor.
    """
    anchor = trace.T + L if schedule is not None else trace.T
    half = anchor - math.ceil(L / 2)
    K, n = trace.K, trace.n
    out = np.empty((trace.T - K + 1, n))
    err = np.full(trace.T - K + 1, np.inf)
    a = np.full(n, 1.0 / n)
    b = np.full(n, 1.0 / n)
    for t in range(anchor, K - 1, -1):
        if t < anchor:
            Rt = _scalar(trace, schedule, "R", t).T
            a = Rt @ a
            if t < half:
                b = Rt @ b
        if K <= t <= trace.T:
            out[t - K] = a
            if t < half:
                err[t - K] = float(np.abs(a - b).sum())
    return out, err


def p_matrix(trace: ExecutionTrace, k: int, V: np.ndarray | None = None) -> np.ndarray:
    """``P̄^k = diag(v^{k+1})^{-1} C̄^k diag(v^k)``; its pattern is that of ``C̄^k``."""
    if not trace.K <= k < trace.T:
        raise ValueError(f"P̄^k needs K <= k < T, got k={k}")
    V = absolute_probability_v(trace, k + 1) if V is None else V
    vk, vk1 = V[k - trace.K], V[k - trace.K + 1]
    return (_scalar(trace, None, "C", k) * vk[None, :]) / vk1[:, None]


def delta_bracket(trace: ExecutionTrace, V: np.ndarray, Phi: np.ndarray) -> np.ndarray:
    """``δ^k = (φ^{k+1})ᵀ Ā^k v^k`` for ``k = K..T−1``."""
    K = trace.K
    return np.array(
        [Phi[k + 1 - K] @ _scalar(trace, None, "A", k) @ V[k - K] for k in range(K, trace.T)]
    )


# --- worst-case constants -------------------------------------------------------


@dataclass(frozen=True)
class LemmaConstants:
    """Constants of the consensus-contraction lemmas.

    ``Q_R``/``Q_P`` are ``inf`` when they exceed the float range, and
    ``overflow`` is also set when ``N_R``/``N_P`` are too large to verify in
    double precision; the logarithms are always finite.
    """

    n: int
    eta: float
    beta_bar: float
    alpha_F: float
    beta_F: float
    log_Q_R: float
    log_Q_P: float
    Q_R: float
    Q_P: float
    N_R: int
    N_P: int
    r_R: float
    r_P: float
    overflow: bool = False

    @property
    def N_bar(self) -> int:
        return max(self.N_R, self.N_P)

    @property
    def t(self) -> float:
        return self.n**2 * self.beta_bar * self.Q_P / self.eta ** (self.n - 1)

    @property
    def q(self) -> float:
        return self.Q_R * math.sqrt(self.n)

    @property
    def m(self) -> float:
        return self.alpha_F / self.n

    @property
    def slope(self) -> float:
        """Predicted ``dρ(M(λ))/dλ`` at 0: ``−n^{-1} η^{n−1} α_F``."""
        return -(self.eta ** (self.n - 1)) * self.alpha_F / self.n


def _log1mexp(log_x: float) -> float:
    """``log(1 − e^{log_x})`` for ``log_x < 0``."""
    if log_x > -0.693:
        return math.log(-math.expm1(log_x))
    return math.log1p(-math.exp(log_x))


def _minimal_N(log_Q: float, log_x: float, n: int) -> tuple[int, float, bool]:
    """Smallest ``N`` with ``Q (1 − x)^{(N−1)/(n−1)} < 1``, the resulting ``r``, and an exactness flag.

    When one step in ``N`` moves ``log r`` by less than a few ulps of ``log Q``
    (or ``N`` exceeds ``2^52``) consecutive candidates are not distinguishable in
    double precision, so the closed form is returned unverified.
    """
    neg_log_b = -math.log1p(-math.exp(log_x)) if log_x > -700 else 0.0
    if neg_log_b == 0.0:
        neg_log_b = math.exp(log_x) if log_x > -745 else 0.0
    if neg_log_b == 0.0:
        return 2**63, 0.0, False

    def log_r(N: int) -> float:
        return log_Q - (N - 1) / (n - 1) * neg_log_b

    N = max(math.floor((n - 1) * log_Q / neg_log_b) + 2, 1)
    if N > 2**52 or neg_log_b / (n - 1) < 8 * math.ulp(max(abs(log_Q), 1.0)):
        return N, math.exp(min(log_r(N), 0.0)), False
    while N > 1 and log_r(N - 1) < 0:
        N -= 1
    while log_r(N) >= 0:
        N += 1
    return N, math.exp(log_r(N)), True


def lemma_constants(n: int, eta: float, beta_bar: float = 1.0, alpha_F: float = 1.0, beta_F: float = 1.0) -> LemmaConstants:
    """Evaluate ``Q_R, Q_P`` and the minimal ``N_R, N_P`` with ``r_R, r_P < 1``.

    ``Q_R = 2n(1 + η^{−(n−1)})/(1 − η^{n−1})`` and
    ``Q_P = 2n(1 + (nη^{−n})^{n−1})/(1 − (η^n/n)^{n−1})``, with
    ``r = Q (1 − x)^{(N−1)/(n−1)}`` where ``x`` is the subtracted power in the
    denominator of ``Q``.
    """
    if n < 2:
        raise ValueError("the constants need n >= 2")
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    ln_eta = math.log(eta)
    # log of the subtracted terms
    lx_R = (n - 1) * ln_eta
    lx_P = (n - 1) * (n * ln_eta - math.log(n))
    log_Q_R = math.log(2 * n) + np.logaddexp(0.0, -lx_R) - _log1mexp(lx_R)
    log_Q_P = math.log(2 * n) + np.logaddexp(0.0, (n - 1) * (math.log(n) - n * ln_eta)) - _log1mexp(lx_P)
    overflow = bool(log_Q_P > 709.0 or log_Q_R > 709.0)
    N_R, r_R, exact_R = _minimal_N(float(log_Q_R), lx_R, n)
    N_P, r_P, exact_P = _minimal_N(float(log_Q_P), lx_P, n)
    overflow = overflow or not (exact_R and exact_P)
    if log_Q_R < 709.0:
        Q_R = 2 * n * (1 + eta ** (-(n - 1))) / (1 - eta ** (n - 1))
    else:
        Q_R = math.inf
    Q_P = math.exp(float(log_Q_P)) if log_Q_P < 709.0 else math.inf
    return LemmaConstants(
        n=n,
        eta=eta,
        beta_bar=beta_bar,
        alpha_F=alpha_F,
        beta_F=beta_F,
        log_Q_R=float(log_Q_R),
        log_Q_P=float(log_Q_P),
        Q_R=Q_R,
        Q_P=Q_P,
        N_R=N_R,
        N_P=N_P,
        r_R=r_R,
        r_P=r_P,
        overflow=overflow,
    )


# --- comparison matrix M(λ) ---------------------------------------------------


@dataclass(eq=False)
class ConvergenceMatrix:
    """Block-companion ``M(λ) = M¹ + λM²`` of side ``3N̄``.

    Stored by its first block row (``F_a``, ``N̄−2`` copies of ``F_b``, ``F_c``);
    identity blocks fill the subdiagonal. The spectral radius is computed from
    the ``3 x 3`` generating function ``G(z) = F_a/z + F_b Σ_{l=2}^{N̄−1} z^{−l} + F_c z^{−N̄}``
    in extended precision: ``ρ(M)`` is the largest ``z > 0`` at which
    ``I − G(z)`` stops being a nonsingular M-matrix.
    """

    constants: LemmaConstants
    lam: float
    N_bar: int
    blocks1: tuple[np.ndarray, np.ndarray, np.ndarray]
    blocks2: tuple[np.ndarray, np.ndarray, np.ndarray]
    dps: int = 60
    _rho: mpmath.mpf | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return 3 * self.N_bar

    def first_row(self, lam: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lam = self.lam if lam is None else lam
        return tuple(a + lam * b for a, b in zip(self.blocks1, self.blocks2))

    def _block(self, l: int, blocks) -> np.ndarray:
        a, b, c = blocks
        if l == 0:
            return a
        return c if l == self.N_bar - 1 else b

    def dense(self, cap: int = DEFAULT_DIM_CAP, part: str = "M") -> np.ndarray:
        """Explicit matrix; ``part`` is ``"M"``, ``"M1"`` or ``"M2"``.

        Raises:
            DimensionTooLarge: ``3N̄`` exceeds ``cap``.
        """
        if self.size > cap:
            raise DimensionTooLarge(f"3N̄ = {self.size} exceeds the cap {cap}")
        blocks = {"M": self.first_row(), "M1": self.blocks1, "M2": self.blocks2}[part]
        M = np.zeros((self.size, self.size))
        for l in range(self.N_bar):
            M[0:3, 3 * l : 3 * l + 3] = self._block(l, blocks)
        if part != "M2":
            M[3:, :-3] += np.eye(self.size - 3)
        return M

    def matvec(self, u: np.ndarray, part: str = "M") -> np.ndarray:
        """``M u`` without forming ``M``."""
        blocks = {"M": self.first_row(), "M1": self.blocks1, "M2": self.blocks2}[part]
        U = np.asarray(u, dtype=float).reshape(self.N_bar, 3)
        out = np.zeros_like(U)
        a, b, c = blocks
        out[0] = a @ U[0] + b @ U[1:-1].sum(axis=0) + c @ U[-1]
        if part != "M2":
            out[1:] += U[:-1]
        return out.reshape(-1)

    def _mp_blocks(self, lam) -> list[list[list[mpmath.mpf]]]:
        lam = mpmath.mpf(lam)
        return [
            [[mpmath.mpf(float(x1[r, c])) + lam * mpmath.mpf(float(x2[r, c])) for c in range(3)] for r in range(3)]
            for x1, x2 in zip(self.blocks1, self.blocks2)
        ]

    def _stable(self, z, blocks) -> bool:
        """All leading principal minors of ``I − G(z)`` are positive."""
        N = self.N_bar
        a, b, c = blocks
        zi = 1 / z
        zN = zi**N
        if N == 2:
            S = mpmath.mpf(0)
        elif z == 1:
            S = mpmath.mpf(N - 2)
        else:
            S = (zi**2 - zN) / (1 - zi)
        m = [[(1 if r == col else 0) - (a[r][col] * zi + b[r][col] * S + c[r][col] * zN) for col in range(3)] for r in range(3)]
        if m[0][0] <= 0:
            return False
        if m[0][0] * m[1][1] - m[0][1] * m[1][0] <= 0:
            return False
        det = (
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        )
        return det > 0

    def below_one(self, lam: float | None = None) -> bool:
        """``ρ(M(λ)) < 1``, decided by one M-matrix test at ``z = 1``."""
        with mpmath.workdps(self.dps):
            return self._stable(mpmath.mpf(1), self._mp_blocks(self.lam if lam is None else lam))

    def spectral_radius(self, lam: float | None = None, steps: int | None = None) -> mpmath.mpf:
        """``ρ(M(λ))`` by bisection on the generating function (extended precision)."""
        lam_val = self.lam if lam is None else lam
        if lam is None and self._rho is not None:
            return self._rho
        with mpmath.workdps(self.dps):
            blocks = self._mp_blocks(lam_val)
            hi = mpmath.mpf(2)
            while not self._stable(hi, blocks):
                hi *= 2
            lo = mpmath.mpf(0)
            for _ in range(steps or int(self.dps * 3.33) + 4):
                mid = (lo + hi) / 2
                if self._stable(mid, blocks):
                    hi = mid
                else:
                    lo = mid
            rho = +hi
        if lam is None:
            self._rho = rho
        return rho

    def spectral_radius_dense(self, cap: int = DEFAULT_DIM_CAP) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.dense(cap)))))


def build_M(constants: LemmaConstants, lam: float = 0.0, N_bar: int | None = None, dps: int = 60) -> ConvergenceMatrix:
    """Assemble ``M(λ)`` from the constants (``N̄`` defaults to ``max(N_R, N_P)``).

    Raises:
        ValueError: ``λ`` outside ``[0, n / (η^{n−1} α_F)]`` (an entry would turn negative).
    """
    c = constants
    N = c.N_bar if N_bar is None else int(N_bar)
    if N < 2:
        raise ValueError("N̄ must be at least 2")
    cap = c.n / (c.eta ** (c.n - 1) * c.alpha_F)
    if lam < 0 or lam > cap:
        raise ValueError(f"λ must lie in [0, {cap:.6g}]")
    if c.overflow:
        raise DimensionTooLarge("constants overflow; the certificate is vacuous at this (n, η)")
    n, bb, t, q, m = c.n, c.beta_bar, c.t, c.q, c.m
    e = c.eta ** (n - 1)
    M1a = np.array([[0, 0, 0], [0, 1, 0], [2 * t, 0, 0]], dtype=float)
    M1b = np.array([[0, 0, 0], [0, 0, 0], [2 * t, 0, 0]], dtype=float)
    M1c = np.array([[c.r_R, 0, 0], [0, 0, 0], [2 * t, 0, c.r_P]], dtype=float)
    M2a = np.array([[n * bb * q, n * bb * q, q], [n * bb, -e * m, n], [n * bb * t, n * bb * t, t]])
    M2b = np.array([[n * bb * q, n * bb * q, q], [0, 0, 0], [n * bb * t, n * bb * t, t]])
    M2c = M2b.copy()
    return ConvergenceMatrix(c, float(lam), N, (M1a, M1b, M1c), (M2a, M2b, M2c), dps=dps)


def eigen_derivative(M: ConvergenceMatrix, eps: float | None = None, rtol: float = 1e-6) -> tuple[float, float]:
    """Forward difference ``(ρ(M(ε)) − ρ(M(0)))/ε``; returns ``(derivative, ε used)``.

    With ``eps=None`` the step shrinks by factors of 1000 from ``1e-8`` until two
    consecutive quotients agree to ``rtol``, down to ``10^{-(dps-15)}`` so that
    about 15 significant digits of the difference survive. With large ``N̄`` the
    simple unit eigenvalue sits within ``~1 − r_P^{1/N̄}`` of others and the
    quotient first grows like ``ε^{-1/2}``, so the linear regime can start many
    orders of magnitude below ``1e-8``. A :class:`NotConvergedWarning` is issued
    when no two quotients agree.
    """
    rho0 = M.spectral_radius(0.0)
    if eps is not None:
        with mpmath.workdps(M.dps):
            return float((M.spectral_radius(eps) - rho0) / mpmath.mpf(eps)), eps
    prev = None
    e = mpmath.mpf("1e-8")
    floor = mpmath.mpf(10) ** (-(M.dps - 15))
    while e >= floor:
        with mpmath.workdps(M.dps):
            q = (M.spectral_radius(e) - rho0) / e
        if prev is not None and abs(q - prev) <= rtol * abs(q):
            return float(q), float(e)
        prev = q
        e /= 1000
    warnings.warn(
        f"difference quotients did not settle down to eps={float(e * 1000):.1e}; raise dps",
        NotConvergedWarning,
        stacklevel=2,
    )
    return float(prev), float(e * 1000)


def certified_stepsize(M: ConvergenceMatrix, grid: int = 80) -> float:
    """Supremum of the initial interval ``(0, λ̄)`` on which ``ρ(M(λ)) < 1``.

    Scans a logarithmic grid up to the nonnegativity cap and refines the first
    crossing by bisection. Returns 0 when no grid point certifies.
    """
    c = M.constants
    cap = c.n / (c.eta ** (c.n - 1) * c.alpha_F)
    good, bad = 0.0, None
    for lam in np.geomspace(cap * 1e-40, cap, grid):
        if M.below_one(float(lam)):
            good = float(lam)
        elif good > 0:
            bad = float(lam)
            break
    if good == 0.0 or bad is None:
        return good
    for _ in range(60):
        mid = math.sqrt(good * bad)
        if M.below_one(mid):
            good = mid
        else:
            bad = mid
    return good


# --- rate fit -------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    rate: float
    intercept: float
    goodness: float
    start: int
    stop: int


def first_below(err: Sequence[float], threshold: float) -> int | None:
    """Index of the first entry strictly below ``threshold``."""
    hits = np.flatnonzero(np.asarray(err) < threshold)
    return int(hits[0]) if hits.size else None


def fit_linear_rate(err: Sequence[float], burn_in: int = 0, stop: int | None = None) -> RateFit:
    """Least-squares line through ``(k, log err_k)`` for ``burn_in <= k <= stop``.

    Returns ``ρ̂ = exp(slope)`` and the coefficient of determination.

    Raises:
        SeriesTooShort: fewer than 20 points after burn-in.
        NonPositiveError: a zero or negative entry in the window.
    """
    e = np.asarray(err, dtype=float)
    stop = e.size - 1 if stop is None else min(stop, e.size - 1)
    window = e[burn_in : stop + 1]
    if window.size < 20:
        raise SeriesTooShort(f"{window.size} points after burn-in, need at least 20")
    if np.any(window <= 0):
        raise NonPositiveError("non-positive error in the fit window; fit the pre-floor prefix")
    k = np.arange(burn_in, stop + 1, dtype=float)
    le = np.log(window)
    slope, intercept = np.polyfit(k, le, 1)
    resid = le - (slope * k + intercept)
    ss_tot = float(np.sum((le - le.mean()) ** 2))
    goodness = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    if ss_tot == 0.0:
        slope = 0.0
    return RateFit(float(np.exp(slope)), float(intercept), goodness, burn_in, stop)


# --- diagnostics and lemma checks ------------------------------------------------


@dataclass(eq=False)
class Diagnostics:
    """Series for ``k = K..T`` (row ``k − K``)."""

    K: int
    xbar_w: np.ndarray  # (L, d)
    x_tilde: np.ndarray  # (L, n, d)
    r: np.ndarray  # (L, n, d)
    s: np.ndarray  # (L, n, d)
    s_tilde: np.ndarray  # (L, n, d)
    v: np.ndarray  # (L, n)
    phi: np.ndarray  # (L, n)
    phi_error: np.ndarray  # (L,)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.K, self.K + self.xbar_w.shape[0])

    @property
    def xi(self) -> np.ndarray:
        """``(‖x̃_w‖, ‖r‖, ‖s̃_w‖)`` per iteration."""
        f = lambda a: np.linalg.norm(a.reshape(a.shape[0], -1), axis=1)
        return np.stack([f(self.x_tilde), f(self.r), f(self.s_tilde)], axis=1)


def diagnostics(
    trace: ExecutionTrace,
    L: int = 200,
    schedule: Schedule | None = None,
    x_star: np.ndarray | None = None,
) -> Diagnostics:
    """Transformed quantities along the stochastic phase of a trace."""
    x_star = trace.x_star if x_star is None else x_star
    if x_star is None:
        raise ValueError("diagnostics need the optimum x*")
    K = trace.K
    X = trace.x[K:]
    Y = trace.y[K:]
    V = absolute_probability_v(trace)
    Phi, err = phi_sequence(trace, L, schedule)
    xbar = np.einsum("kn,knd->kd", Phi, X)
    x_tilde = X - xbar[:, None, :]
    r = np.broadcast_to(xbar[:, None, :] - np.asarray(x_star).reshape(1, 1, -1), X.shape).copy()
    s = Y / V[:, :, None]
    s_tilde = s - Y.sum(axis=1)[:, None, :]
    return Diagnostics(K, xbar, x_tilde, r, s, s_tilde, V, Phi, err)


@dataclass(frozen=True)
class LemmaCheck:
    name: str
    applicable: bool
    checked: int
    violations: int
    worst_ratio: float  # max LHS/RHS
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.applicable and self.violations == 0


def lemma_checks(
    trace: ExecutionTrace,
    diag: Diagnostics,
    c: LemmaConstants,
    lam: float,
    rtol: float = 1e-9,
    atol: float = 0.0,
) -> list[LemmaCheck]:
    """Spot-check the three one-step inequalities on every applicable iteration.

    The consensus and tracking inequalities need ``k >= K + N̄ − 1``; the
    optimality inequality needs ``λ <= 1/β_F``.
    An entry violates when ``LHS > RHS (1 + rtol) + atol``; once the error sits
    at the roundoff floor a strict contraction cannot be resolved, so pass an
    ``atol`` of a few ulps of the state magnitude there.
    """
    n, bb, N = c.n, c.beta_bar, c.N_bar
    xi = diag.xi
    K, T = trace.K, trace.T
    e = c.eta ** (n - 1)
    out: list[LemmaCheck] = []

    def idx(k: int) -> int:
        return k - K

    def tally(name, ks, lhs_rhs, note=""):
        if not ks:
            return LemmaCheck(name, False, 0, 0, float("nan"), note or "no applicable iteration")
        ratios = [l / r if r > 0 else (0.0 if l == 0 else math.inf) for l, r in lhs_rhs]
        bad = sum(1 for l, r in lhs_rhs if l > r * (1 + rtol) + atol)
        return LemmaCheck(name, True, len(ks), bad, max(ratios), note)

    ks = list(range(K + N - 1, T))
    pairs = []
    a = lam * c.Q_R * n * math.sqrt(n) * bb
    bq = lam * c.Q_R * math.sqrt(n)
    for k in ks:
        old = xi[idx(k - N + 1)]
        recent = xi[idx(k - N + 2) : idx(k) + 1].sum(axis=0) if N >= 2 else np.zeros(3)
        rhs = (c.r_R + a) * old[0] + a * recent[0] + a * (old[1] + recent[1]) + bq * (old[2] + recent[2])
        pairs.append((xi[idx(k + 1), 0], rhs))
    out.append(tally("consensus_contraction", ks, pairs))

    if lam <= 1.0 / c.beta_F:
        ks2 = list(range(K, T))
        pairs = []
        for k in ks2:
            x0, r0, s0 = xi[idx(k)]
            rhs = lam * n * bb * x0 + (1 - lam * e * c.alpha_F / n) * r0 + lam * n * s0
            pairs.append((xi[idx(k + 1), 1], rhs))
        out.append(tally("optimality_contraction", ks2, pairs))
    else:
        out.append(LemmaCheck("optimality_contraction", False, 0, 0, float("nan"), "λ > 1/β_F"))

    pairs = []
    u = n * n * bb * c.Q_P / e
    w = lam * n**3 * bb**2 * c.Q_P / e
    for k in ks:
        old = xi[idx(k - N + 1)]
        recent = xi[idx(k - N + 2) : idx(k) + 1].sum(axis=0) if N >= 2 else np.zeros(3)
        rhs = (2 * u + w) * (old[0] + recent[0]) + w * (old[1] + recent[1]) + (c.r_P + lam * u) * old[2] + lam * u * recent[2]
        pairs.append((xi[idx(k + 1), 2], rhs))
    out.append(tally("tracking_contraction", ks, pairs))
    return out
