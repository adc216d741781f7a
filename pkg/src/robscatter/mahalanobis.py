"""Robust Mahalanobis distances and their reference laws."""

from dataclasses import dataclass
import math

import numpy as np

from .ces import as_generator
from .errors import ParameterError
from .numkit import linalg
from .numkit.special import log_beta, reg_incomplete_beta, reg_incomplete_gamma_P

SCALED_CHI2 = "scaled_chi2"
SCALED_BETA_PRIME = "scaled_beta_prime"

TRUE_SCATTER = "true"
SCM_SOURCE = "scm"
M_ESTIMATOR = "m_estimator"


@dataclass(frozen=True)
class DistanceSample:
    value: float
    matrix_source: str = TRUE_SCATTER
    estimator: str | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not self.value >= 0:
            raise ParameterError("squared distance must be nonnegative")


def mahalanobis_sq(z, M):
    """``z^H M^{-1} z`` for a vector ``z`` or for each row of a ``(n, m)`` array.

    Raises :class:`SingularMatrixError` if ``M`` is not positive definite.
    """
    z = np.asarray(z, dtype=complex)
    L = linalg.cholesky(M)
    single = z.ndim == 1
    t = linalg.quadratic_forms(np.atleast_2d(z), L)
    t = np.maximum(t, 0.0)
    return float(t[0]) if single else t


class RefDistribution:
    """Reference law for a squared Mahalanobis distance.

    ``scaled_chi2``: ``Gamma(m, 1)``, the law with the true scatter.
    ``scaled_beta_prime``: ``K * X`` with ``X ~ beta'(m, K - m + 1)``, the law
    with the SCM built from ``K`` independent samples.
    """

    def __init__(self, kind, m, K=None):
        if m < 1:
            raise ParameterError("m must be >= 1")
        if kind == SCALED_BETA_PRIME:
            if K is None or K < m + 1:
                raise ParameterError("scaled beta prime requires K >= m + 1")
        elif kind != SCALED_CHI2:
            raise ParameterError(f"unknown reference distribution {kind!r}")
        self.kind = kind
        self.m = int(m)
        self.K = None if K is None else int(K)

    @property
    def _b(self):
        return self.K - self.m + 1

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        m = self.m
        pos = y > 0
        ys = np.where(pos, y, 1.0)
        if self.kind == SCALED_CHI2:
            logp = (m - 1) * np.log(ys) - ys - math.lgamma(m)
        else:
            K = self.K
            x = ys / K
            logp = (m - 1) * np.log(x) - (K + 1) * np.log1p(x) - log_beta(m, self._b) - math.log(K)
        return np.where(pos, np.exp(logp), 0.0)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        y = np.maximum(y, 0.0)
        if self.kind == SCALED_CHI2:
            return reg_incomplete_gamma_P(self.m, y)
        with np.errstate(invalid="ignore"):
            u = np.where(np.isinf(y), 1.0, y / (self.K + y))
        return reg_incomplete_beta(self.m, self._b, u)

    def mean(self):
        if self.kind == SCALED_CHI2:
            return float(self.m)
        b = self._b
        return self.K * self.m / (b - 1) if b > 1 else math.inf

    def var(self):
        m = self.m
        if self.kind == SCALED_CHI2:
            return float(m)
        b = self._b
        if b <= 2:
            return math.inf
        return self.K**2 * m * (m + b - 1) / ((b - 2) * (b - 1) ** 2)

    def sample(self, n, rng):
        gen = as_generator(rng)
        if self.kind == SCALED_CHI2:
            return gen.gamma(self.m, 1.0, size=n)
        x = gen.gamma(self.m, 1.0, size=n)
        w = gen.gamma(self._b, 1.0, size=n)
        return self.K * x / w

    def describe(self):
        if self.kind == SCALED_CHI2:
            return f"scaled_chi2(m={self.m})"
        return f"scaled_beta_prime(m={self.m}, K={self.K})"


def ref_distribution(kind, m, K=None):
    return RefDistribution(kind, m, K)


def phi_variance(coeffs):
    """Limit variance ``sigma1 + sigma2`` of :func:`scaled_distance_deviation`."""
    return coeffs.sigma1 + coeffs.sigma2


def scaled_distance_deviation(z, Mrob, sigma, Mscm, Mtrue, K):
    """``sqrt(K) (z^H (sigma Mrob)^{-1} z - z^H Mscm^{-1} z) / (z^H Mtrue^{-1} z)``.

    Pass ``Mscm = Mtrue`` for the centering about the true scatter.
    """
    if not sigma > 0:
        raise ParameterError("sigma must be > 0")
    num = mahalanobis_sq(z, sigma * np.asarray(Mrob)) - mahalanobis_sq(z, Mscm)
    return math.sqrt(K) * num / mahalanobis_sq(z, Mtrue)


def batched_distance(z, M):
    """``z_i^H M_i^{-1} z_i`` for stacks ``M`` of shape ``(T, m, m)``.

    ``z`` is a single vector (fixed test point) or a ``(T, m)`` array.
    """
    M = np.asarray(M)
    z = np.asarray(z, dtype=complex)
    if M.ndim == 2:
        return np.atleast_1d(mahalanobis_sq(z, M))
    L = linalg.cholesky(M)
    if z.ndim == 1:
        z = np.broadcast_to(z, (M.shape[0], z.shape[0]))
    return np.maximum(linalg.quadratic_forms(z[:, None, :], L)[:, 0], 0.0)


def scaled_distance_deviation_batch(z, Mrob, sigma, Mcenter, Mtrue, K):
    """Vectorized :func:`scaled_distance_deviation` over a trial axis."""
    num = batched_distance(z, sigma * np.asarray(Mrob)) - batched_distance(z, Mcenter)
    Mtrue = np.asarray(Mtrue)
    den = mahalanobis_sq(z, Mtrue) if Mtrue.ndim == 2 else batched_distance(z, Mtrue)
    return math.sqrt(K) * num / den


def ks_statistic(samples, ref):
    """Kolmogorov-Smirnov distance ``sup |F_n - F|`` between samples and ``ref``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise ParameterError("ks_statistic needs at least 10 samples")
    F = ref.cdf(x)
    hi = np.arange(1, n + 1) / n - F
    lo = F - np.arange(0, n) / n
    return float(max(hi.max(), lo.max(), 0.0))
