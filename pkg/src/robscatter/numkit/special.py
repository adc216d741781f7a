"""Regularized incomplete gamma / beta functions and the chi-square quantile.

Shape parameters are scalars; the argument ``x`` may be an array. Both
incomplete functions use a power series on one side of the usual switch point
and a modified Lentz continued fraction on the other.
"""

import math
from statistics import NormalDist

import numpy as np

from ..errors import ParameterError, SolverError

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_ITER = 100_000


def _gamma_series(s, x):
    # lower series sum_{n>=0} x^n / (s (s+1) ... (s+n)), times exp(-x) x^s / Gamma(s)
    term = np.full_like(x, 1.0 / s)
    total = term.copy()
    ap = s
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        ap += 1.0
        term = np.where(active, term * x / ap, term)
        total = np.where(active, total + term, total)
        active &= np.abs(term) > np.abs(total) * _EPS
        if not active.any():
            break
    return total * np.exp(-x + s * np.log(x) - math.lgamma(s))


def _gamma_cf(s, x):
    # upper tail Q(s, x) by continued fraction
    b = x + 1.0 - s
    c = np.full_like(x, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b = b + 2.0
        dn = an * d + b
        dn = np.where(np.abs(dn) < _FPMIN, _FPMIN, dn)
        cn = b + an / c
        cn = np.where(np.abs(cn) < _FPMIN, _FPMIN, cn)
        dn = 1.0 / dn
        delta = dn * cn
        h = np.where(active, h * delta, h)
        d = np.where(active, dn, d)
        c = np.where(active, cn, c)
        active &= np.abs(delta - 1.0) > _EPS
        if not active.any():
            break
    return np.exp(-x + s * np.log(x) - math.lgamma(s)) * h


def reg_incomplete_gamma_P(s, x):
    """Regularized lower incomplete gamma function ``P(s, x)``.

    The chi-square CDF with ``k`` degrees of freedom is ``P(k/2, x/2)``.
    """
    if not s > 0:
        raise ParameterError(f"shape s must be > 0, got {s}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ParameterError("x must be >= 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    pos = x > 0
    inf = np.isinf(x)
    out[inf] = 1.0
    lo = pos & ~inf & (x < s + 1.0)
    hi = pos & ~inf & ~lo
    if lo.any():
        out[lo] = _gamma_series(s, x[lo])
    if hi.any():
        out[hi] = 1.0 - _gamma_cf(s, x[hi])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def chi2_cdf(k, x):
    return reg_incomplete_gamma_P(0.5 * k, 0.5 * np.asarray(x, dtype=float))


def chi2_pdf(k, x):
    x = np.asarray(x, dtype=float)
    h = 0.5 * k
    with np.errstate(divide="ignore"):
        logp = (h - 1.0) * np.log(x) - 0.5 * x - h * math.log(2.0) - math.lgamma(h)
    return np.where(x > 0, np.exp(logp), 0.0 if k != 2 else 0.5)


def chi2_quantile(k, p, rtol=1e-14):
    """Return ``x`` with ``chi2_cdf(k, x) == p``.

    Newton steps inside a maintained bracket, falling back to bisection when
    a step would leave it.
    """
    if k < 1:
        raise ParameterError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise ParameterError(f"p must lie in (0, 1), got {p}")
    # Wilson-Hilferty start
    z = NormalDist().inv_cdf(p)
    x = k * (1.0 - 2.0 / (9.0 * k) + z * math.sqrt(2.0 / (9.0 * k))) ** 3
    if not x > 0:
        x = 0.5 * k
    lo, hi = 0.0, max(x, 1.0)
    while chi2_cdf(k, hi) < p:
        lo, hi = hi, 2.0 * hi
    x = min(max(x, lo), hi)
    for _ in range(500):
        f = chi2_cdf(k, x) - p
        if f == 0.0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        dens = float(chi2_pdf(k, x))
        step_ok = dens > 0
        if step_ok:
            xn = x - f / dens
            step_ok = lo < xn < hi
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= rtol * max(xn, _FPMIN) or hi - lo <= rtol * hi:
            return xn
        x = xn
    raise SolverError(f"chi2_quantile did not converge for k={k}, p={p}")


def log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cf(a, b, x):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _MAX_ITER):
        m2 = 2 * i
        aa = i * (b - i) * x / ((qam + m2) * (a + m2))
        dn = 1.0 + aa * d
        dn = np.where(np.abs(dn) < _FPMIN, _FPMIN, dn)
        cn = 1.0 + aa / c
        cn = np.where(np.abs(cn) < _FPMIN, _FPMIN, cn)
        dn = 1.0 / dn
        h1 = h * dn * cn
        aa = -(a + i) * (qab + i) * x / ((a + m2) * (qap + m2))
        dn = 1.0 + aa * dn
        dn = np.where(np.abs(dn) < _FPMIN, _FPMIN, dn)
        cn = 1.0 + aa / cn
        cn = np.where(np.abs(cn) < _FPMIN, _FPMIN, cn)
        dn = 1.0 / dn
        delta = dn * cn
        h = np.where(active, h1 * delta, h)
        d = np.where(active, dn, d)
        c = np.where(active, cn, c)
        active &= np.abs(delta - 1.0) > _EPS
        if not active.any():
            break
    return h


def reg_incomplete_beta(a, b, x):
    """Regularized incomplete beta function ``I_x(a, b)`` for ``0 <= x <= 1``."""
    if not (a > 0 and b > 0):
        raise ParameterError("beta shape parameters must be > 0")
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ParameterError("x must lie in [0, 1]")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.where(x >= 1.0, 1.0, 0.0)
    inner = (x > 0) & (x < 1)
    if inner.any():
        xi = x[inner]
        logfront = a * np.log(xi) + b * np.log1p(-xi) - log_beta(a, b)
        front = np.exp(logfront)
        direct = xi < (a + 1.0) / (a + b + 2.0)
        res = np.empty_like(xi)
        if direct.any():
            res[direct] = front[direct] * _beta_cf(a, b, xi[direct]) / a
        if (~direct).any():
            xr = xi[~direct]
            res[~direct] = 1.0 - front[~direct] * _beta_cf(b, a, 1.0 - xr) / b
        out[inner] = res
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out
