"""Scatter matrix estimators: SCM and fixed-point M-estimators.

Samples are arrays of shape ``(K, m)`` (one sample per row); the batched
entry points take ``(T, K, m)`` and process ``T`` independent data sets at
once. Each data set is processed with exactly the same arithmetic whether it
is alone or inside a batch.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ces import as_generator, modular_variate_distribution
from .errors import DegenerateInputError, ParameterError, SingularMatrixError, SolverError
from .numkit.special import chi2_cdf, chi2_quantile

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000

SCM = "scm"
TYLER = "tyler"
HUBER = "huber"
STUDENT = "student"


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """An M-estimator weight ``phi`` with ``psi(u) = u * phi(u)``.

    ``psi_prime`` is a pointwise derivative; for Huber it is NaN at the kink
    ``u = p^2`` and ``differentiable_everywhere`` is False.
    """

    name: str
    m: int
    phi: Callable
    psi: Callable
    psi_prime: Callable | None
    differentiable_everywhere: bool
    psi_sup: float
    params: dict = field(default_factory=dict)

    @property
    def constant_psi(self):
        return self.name == TYLER

    @property
    def constant_phi(self):
        return self.name == SCM

    def label(self):
        if self.name == HUBER:
            return f"huber(q={self.params['q']:g})"
        if self.name == STUDENT:
            return f"student(nu={self.params['nu']:g})"
        return self.name


@dataclass(frozen=True)
class HuberConstants:
    q: float
    p_sq: float
    beta: float


def huber_constants(q, m):
    """Threshold ``p^2`` and normalization ``beta`` of Huber's weight.

    ``q = F_{2m}(2 p^2)`` and ``beta = F_{2m+2}(2 p^2) + p^2 (1 - q) / m`` where
    ``F_k`` is the chi-square CDF with ``k`` degrees of freedom.
    """
    if not 0.0 < q < 1.0:
        raise ParameterError(f"Huber q must lie in (0, 1), got {q}")
    if m < 1:
        raise ParameterError("m must be >= 1")
    p_sq = 0.5 * chi2_quantile(2 * m, q)
    beta = float(chi2_cdf(2 * m + 2, 2.0 * p_sq)) + p_sq * (1.0 - q) / m
    return HuberConstants(q=q, p_sq=p_sq, beta=beta)


def scm_weight(m):
    one = lambda u: np.ones_like(np.asarray(u, dtype=float))
    return WeightSpec(SCM, m, phi=one, psi=lambda u: np.asarray(u, dtype=float),
                      psi_prime=one, differentiable_everywhere=True, psi_sup=np.inf)


def tyler_weight(m):
    def phi(u):
        return m / np.asarray(u, dtype=float)

    def psi(u):
        return np.full_like(np.asarray(u, dtype=float), float(m))

    def psi_prime(u):
        return np.zeros_like(np.asarray(u, dtype=float))

    return WeightSpec(TYLER, m, phi=phi, psi=psi, psi_prime=psi_prime,
                      differentiable_everywhere=True, psi_sup=float(m))


def student_weight(m, nu):
    if not nu > 0:
        raise ParameterError(f"Student weight needs nu > 0, got {nu}")
    h = 0.5 * nu

    def phi(u):
        return (m + h) / (h + np.asarray(u, dtype=float))

    def psi(u):
        u = np.asarray(u, dtype=float)
        return (m + h) * u / (h + u)

    def psi_prime(u):
        return (m + h) * h / (h + np.asarray(u, dtype=float)) ** 2

    return WeightSpec(STUDENT, m, phi=phi, psi=psi, psi_prime=psi_prime,
                      differentiable_everywhere=True, psi_sup=m + h, params={"nu": float(nu)})


def huber_weight(m, q):
    hc = huber_constants(q, m)
    p_sq, beta = hc.p_sq, hc.beta

    def phi(u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(u <= p_sq, 1.0 / beta, p_sq / (beta * u))

    def psi(u):
        return np.minimum(np.asarray(u, dtype=float), p_sq) / beta

    def psi_prime(u):
        u = np.asarray(u, dtype=float)
        return np.where(u < p_sq, 1.0 / beta, np.where(u > p_sq, 0.0, np.nan))

    return WeightSpec(HUBER, m, phi=phi, psi=psi, psi_prime=psi_prime,
                      differentiable_everywhere=False, psi_sup=p_sq / beta,
                      params={"q": float(q), "p_sq": p_sq, "beta": beta})


def weight_library(name, m, *, q=None, nu=None):
    """Build a :class:`WeightSpec` by name (``scm``, ``tyler``, ``huber``, ``student``)."""
    if m < 1:
        raise ParameterError("m must be >= 1")
    name = name.lower()
    if name == SCM:
        return scm_weight(m)
    if name == TYLER:
        return tyler_weight(m)
    if name == HUBER:
        if q is None:
            raise ParameterError("Huber weight needs q")
        return huber_weight(m, q)
    if name in (STUDENT, "t"):
        if nu is None:
            raise ParameterError("Student weight needs nu")
        return student_weight(m, nu)
    raise ParameterError(f"unknown estimator {name!r}")


def scm(samples):
    """Sample covariance ``(1/K) sum_k x_k x_k^H`` for ``(K, m)`` or ``(T, K, m)`` input."""
    X = np.asarray(samples)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[-2] == 0:
        raise ParameterError("scm needs at least one sample")
    K = X.shape[-2]
    S = np.swapaxes(X, -1, -2) @ X.conj() / K
    return 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))


@dataclass
class FixedPointReport:
    estimate: np.ndarray
    iterations: int
    residual: float
    converged: bool


@dataclass
class BatchReport:
    estimates: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray

    def __getitem__(self, i):
        return FixedPointReport(self.estimates[i], int(self.iterations[i]),
                                float(self.residuals[i]), bool(self.converged[i]))


def _scale_correction(t, weight, max_iter=200):
    """Per-row scalar ``s`` with ``mean_k psi(t_k / s) = m``.

    Safeguarded Newton on ``log s``. At a fixed point of the M-estimating
    equation the correction is exactly 1, so applying it between iterations
    changes the trajectory but not the limit.
    """
    m = weight.m
    T = t.shape[0]
    u = np.zeros(T)
    lo = np.full(T, -np.inf)
    hi = np.full(T, np.inf)
    idx = np.arange(T)
    for _ in range(max_iter):
        x = t[idx] * np.exp(-u[idx])[:, None]
        h = weight.psi(x).mean(axis=1) - m
        dh = -np.nanmean(weight.psi_prime(x) * x, axis=1)
        ui = u[idx]
        lo[idx] = np.where(h > 0, ui, lo[idx])
        hi[idx] = np.where(h <= 0, ui, hi[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            un = ui - h / dh
        li, hi_ = lo[idx], hi[idx]
        bad = ~np.isfinite(un) | (un <= li) | (un >= hi_)
        both = np.isfinite(li) & np.isfinite(hi_)
        fallback = np.where(both, 0.5 * (li + hi_), np.where(np.isfinite(li), li + 1.0, hi_ - 1.0))
        un = np.where(bad, fallback, un)
        done = (np.abs(un - ui) < 1e-13) | (h == 0)
        u[idx] = np.where(h == 0, ui, un)
        idx = idx[~done]
        if idx.size == 0:
            break
    return np.exp(u)


def _check_samples(Z, weight):
    if Z.ndim != 3:
        raise ParameterError("batched samples must have shape (T, K, m)")
    T, K, m = Z.shape
    if m != weight.m:
        raise ParameterError(f"weight built for m={weight.m} but samples have m={m}")
    if K <= m:
        raise ParameterError(f"M-estimation needs K > m (got K={K}, m={m})")
    if weight.name == TYLER:
        norms = np.einsum("tki,tki->tk", Z.view(np.float64), Z.view(np.float64))
        if np.any(norms == 0):
            raise DegenerateInputError("Tyler's weight is unbounded at zero; found a zero sample")


def m_estimate_batch(samples, weight, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rescale=True):
    """Solve the M-estimating equation for each of ``T`` data sets.

    Iterates ``M <- (1/K) sum_k phi(z_k^H M^{-1} z_k) z_k z_k^H`` from the
    identity until the relative Frobenius change drops below ``tol``. Tyler
    iterates are renormalized to trace ``m``. For the other non-constant
    weights (Huber, Student) each iterate's overall scale is first corrected
    so that the sample mean of ``psi`` equals ``m``; ``rescale=False`` gives
    the plain iteration.
    """
    Z = np.ascontiguousarray(np.asarray(samples, dtype=complex))
    _check_samples(Z, weight)
    T, K, m = Z.shape
    if weight.constant_phi:
        S = scm(Z)
        return BatchReport(S, np.ones(T, dtype=int), np.zeros(T), np.ones(T, dtype=bool))

    ZT = np.ascontiguousarray(np.swapaxes(Z, -1, -2))
    Zc = Z.conj()
    M = np.broadcast_to(np.eye(m, dtype=complex), (T, m, m)).copy()
    iterations = np.zeros(T, dtype=int)
    residuals = np.full(T, np.inf)
    converged = np.zeros(T, dtype=bool)
    use_scale = rescale and not weight.constant_psi
    active = np.arange(T)
    for _ in range(max_iter):
        full = active.size == T
        Za = Z if full else Z[active]
        Mcur = M if full else M[active]
        try:
            L = np.linalg.cholesky(Mcur)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("an iterate lost positive definiteness") from exc
        Linv = np.linalg.inv(L)
        Y = Za @ np.swapaxes(Linv, -1, -2)
        Yr = Y.view(np.float64)
        t = np.einsum("tki,tki->tk", Yr, Yr)
        if use_scale:
            s = _scale_correction(t, weight)
            t = t / s[:, None]
            Mcur = Mcur * s[:, None, None]
        w = weight.phi(t)
        Mn = ((ZT if full else ZT[active]) * w[:, None, :]) @ (Zc if full else Zc[active])
        Mn /= K
        Mn = 0.5 * (Mn + np.conj(np.swapaxes(Mn, -1, -2)))
        if weight.constant_psi:
            Mn *= (m / np.trace(Mn, axis1=-2, axis2=-1).real)[:, None, None]
        res = np.linalg.norm(Mn - Mcur, axis=(-2, -1)) / np.linalg.norm(Mcur, axis=(-2, -1))
        M[active] = Mn
        iterations[active] += 1
        residuals[active] = res
        done = res < tol
        converged[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
    return BatchReport(M, iterations, residuals, converged)


def m_estimate(samples, weight, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, rescale=True):
    """Fixed-point M-estimate for one ``(K, m)`` sample set.

    Returns a :class:`FixedPointReport`; non-convergence within ``max_iter``
    is reported through ``converged=False`` rather than raised.
    """
    Z = np.asarray(samples)
    if Z.ndim != 2:
        raise ParameterError("samples must have shape (K, m)")
    return m_estimate_batch(Z[None], weight, tol=tol, max_iter=max_iter, rescale=rescale)[0]


def fixed_point_residual(estimate, samples, weight):
    """Relative residual ``||M - F(M)||_F / ||M||_F`` of the plain map ``F``.

    For Tyler both sides are projected to trace ``m`` first.
    """
    M = np.asarray(estimate)
    Z = np.asarray(samples)
    L = np.linalg.cholesky(M)
    t = np.einsum("...i,...i->...", *(2 * [(Z @ np.linalg.inv(L).T).view(np.float64)]))
    F = (Z.T * weight.phi(t)) @ Z.conj() / Z.shape[0]
    if weight.constant_psi:
        m = M.shape[0]
        F = F * (m / np.trace(F).real)
        M = M * (m / np.trace(M).real)
    return float(np.linalg.norm(M - F) / np.linalg.norm(M))


def _root_on_draws(weight, t, m, rtol=1e-6):
    def g(s):
        return float(np.mean(weight.psi(s * t))) - m

    lo, hi = 1e-6, 1e6
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo < 0 < g_hi):
        raise SolverError(f"E[psi(s t)] - m has no sign change on [{lo:g}, {hi:g}]")
    # geometric bisection to a narrow bracket, then secant
    while hi / lo > 1.01:
        mid = np.sqrt(lo * hi)
        gm = g(mid)
        if gm == 0:
            return mid
        if gm < 0:
            lo, g_lo = mid, gm
        else:
            hi, g_hi = mid, gm
    a, b, ga, gb = lo, hi, g_lo, g_hi
    for _ in range(100):
        if gb == ga:
            break
        c = b - gb * (b - a) / (gb - ga)
        if not lo <= c <= hi:
            c = 0.5 * (lo + hi)
        gc = g(c)
        if gc < 0:
            lo = c
        else:
            hi = c
        if abs(c - b) <= rtol * c:
            return c
        a, ga, b, gb = b, gb, c, gc
    return 0.5 * (lo + hi)


def solve_sigma(weight, model, m=None, rng=None, n_draws=10**6, draws=None):
    """Consistency factor ``sigma`` with ``E[psi(sigma t)] = m``.

    ``t`` follows the modular-variate law of ``model``; the expectation is a
    Monte Carlo average over ``n_draws`` draws (or the supplied ``draws``).
    Tyler (constant ``psi``) returns exactly 1, and the SCM returns
    ``m / E[t]`` analytically.
    """
    m = weight.m if m is None else m
    if weight.constant_psi:
        return 1.0
    if weight.constant_phi:
        mean_tau = model.texture_mean()
        if not np.isfinite(mean_tau):
            raise SolverError("SCM consistency factor needs a finite texture mean")
        return 1.0 / mean_tau
    if not np.isfinite(weight.psi_sup) or weight.psi_sup <= m:
        raise SolverError("psi must be bounded with sup psi > m")
    if draws is None:
        rng = 0 if rng is None else rng
        draws = modular_variate_distribution(model, m).sample(n_draws, as_generator(rng))
    return _root_on_draws(weight, np.asarray(draws, dtype=float), m)
