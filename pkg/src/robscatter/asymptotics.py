"""Asymptotic covariance coefficients and structured covariance builders.

Given the moments ``a = E[psi(s t1)^2]``, ``b = E[psi(s t1) t2]`` and
``c = E[psi'(s t1) s t1] + m^2`` (``s`` the consistency factor, ``t1`` the
modular variate of the observation and ``t2`` that of its Gaussian core), the
covariance of ``sqrt(K) vec(s*Mhat - Mscm)`` is

    Sigma = sigma1 M^T (x) M + sigma2 vec(M) vec(M)^H

with ``sigma1 = theta1 - 2 gamma1 + 1`` and ``sigma2 = theta2 - 2 gamma2``,
where ``theta`` parameterizes the covariance about the true scatter and
``gamma`` the cross-covariance with the SCM.
"""

from dataclasses import dataclass

import numpy as np

from .ces import GAUSSIAN, STUDENT as STUDENT_MODEL, as_generator, modular_variate_distribution
from .errors import ParameterError, SingularCoefficientError, UnsupportedError
from .estimators import HUBER, SCM, STUDENT, TYLER, _root_on_draws
from .numkit.linalg import commutation_matrix, vec

CLOSED_FORM = "closed_form"
MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class AsymCoeffs:
    m: int
    a: float
    b: float
    c: float
    theta1: float
    theta2: float
    gamma1: float
    gamma2: float
    sigma1: float
    sigma2: float
    sigma: float = 1.0
    source: str = CLOSED_FORM
    n_draws: int | None = None
    seed: int | None = None
    stderr: dict | None = None

    def __post_init__(self):
        m = self.m
        if not self.theta1 > 0:
            raise ParameterError(f"theta1 must be > 0, got {self.theta1}")
        if self.theta2 < -self.theta1 / m - 1e-12 * self.theta1:
            raise ParameterError("theta2 must be >= -theta1/m")
        scale = max(1.0, abs(self.theta1), abs(self.theta2))
        if abs(self.sigma1 - (self.theta1 - 2 * self.gamma1 + 1)) > 1e-10 * scale:
            raise ParameterError("sigma1 != theta1 - 2 gamma1 + 1")
        if abs(self.sigma2 - (self.theta2 - 2 * self.gamma2)) > 1e-10 * scale:
            raise ParameterError("sigma2 != theta2 - 2 gamma2")

    @property
    def phi(self):
        """Variance of the normalized Mahalanobis deviation, ``sigma1 + sigma2``."""
        return self.sigma1 + self.sigma2

    def as_dict(self):
        keys = ("a", "b", "c", "theta1", "theta2", "gamma1", "gamma2", "sigma1", "sigma2", "sigma")
        out = {k: getattr(self, k) for k in keys}
        out["phi"] = self.phi
        return out


def first_order_coeffs(a, b, c, m):
    """``(theta1, gamma1, sigma1)`` from the moments; regular whenever ``c != 0``.

    Plain arithmetic, so exact rational inputs (``fractions.Fraction``) give
    exact outputs.
    """
    theta1 = a * m * (m + 1) / c**2
    gamma1 = b / c
    sigma1 = (a * m * (m + 1) + c * (c - 2 * b)) / c**2
    return theta1, gamma1, sigma1


def coefficients_from_moments(a, b, c, m):
    """Generic formulas; returns ``(theta1, theta2, gamma1, gamma2, sigma1, sigma2)``.

    Raises :class:`SingularCoefficientError` when ``c == m^2`` (the
    ``theta2``/``gamma2`` denominators vanish).
    """
    m2 = m * m
    if abs(c - m2) <= 1e-12 * m2:
        raise SingularCoefficientError("c == m^2: generic theta2/gamma2 formulas are singular")
    theta1, gamma1, sigma1 = first_order_coeffs(a, b, c, m)
    theta2 = (a - m2) / (c - m2) ** 2 - a * (m + 1) / c**2
    gamma2 = m * (b - c) / (c * (c - m2))
    sigma2 = (a - m2) / (c - m2) ** 2 - a * (m + 1) / c**2 + 2 * m * (c - b) / (c * (c - m2))
    return theta1, theta2, gamma1, gamma2, sigma1, sigma2


def _tyler_tail(a, b, c, m):
    # generic sigma2 is 0/0 at a = c = m^2; use the dedicated Tyler result
    theta1, gamma1, sigma1 = first_order_coeffs(a, b, c, m)
    theta2 = -(m + 1) / m**2
    sigma2 = (m - 1) / m**2
    gamma2 = 0.5 * (theta2 - sigma2)
    return theta1, theta2, gamma1, gamma2, sigma1, sigma2


def student_moment(m, nu):
    """Common value of ``a = b = c`` for the Student MLE on Student data.

    Exact when ``nu`` is a ``Fraction``.
    """
    h = nu / 2
    return m * (m + 1) * (m + h) / (m + 1 + h)


def coeffs_closed_form(weight, model, m=None):
    """Closed-form coefficients for Tyler (any CES model), the Student MLE on
    data with matching degrees of freedom, and the SCM on Gaussian data."""
    m = weight.m if m is None else m
    if weight.name == TYLER:
        m2 = float(m * m)
        theta1 = (m + 1) / m
        theta2 = -(m + 1) / m**2
        sigma1 = 1.0 / m
        sigma2 = (m - 1) / m**2
        return AsymCoeffs(m, m2, m2, m2, theta1, theta2, 1.0, -1.0 / m, sigma1, sigma2)
    if weight.name == STUDENT:
        nu = weight.params["nu"]
        if model.kind != STUDENT_MODEL or not np.isclose(model.nu, nu, rtol=1e-12, atol=0):
            raise UnsupportedError("Student closed form requires Student data with the same nu")
        h = 0.5 * nu
        A = student_moment(m, nu)
        # a = b = c: gamma1 = 1, gamma2 = 0, theta2 = sigma2
        sigma1 = 1.0 / (m + h)
        sigma2 = 2.0 * (m + 1 + h) / (nu * (m + h))
        theta1 = (m + 1 + h) / (m + h)
        theta2, gamma1, gamma2 = sigma2, 1.0, 0.0
        return AsymCoeffs(m, A, A, A, theta1, theta2, gamma1, gamma2, sigma1, sigma2)
    if weight.name == SCM:
        if model.kind != GAUSSIAN:
            raise UnsupportedError("SCM closed form is only provided for Gaussian data")
        A = float(m * (m + 1))
        return AsymCoeffs(m, A, A, A, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    if weight.name == HUBER:
        raise UnsupportedError("Huber's psi is not differentiable at p^2; use coeffs_monte_carlo")
    raise UnsupportedError(f"no closed form for {weight.name}")


def _moment_coeffs(a, b, c, m, tyler):
    if tyler:
        return _tyler_tail(a, b, c, m)
    return coefficients_from_moments(a, b, c, m)


def coeffs_monte_carlo(weight, model, m=None, n_draws=10**6, rng=None, n_groups=20):
    """Monte Carlo estimate of ``(a, b, c)`` and the derived coefficients.

    Draws ``t2 ~ Gamma(m, 1)`` and ``t1 = tau * t2`` with the model's texture,
    solves for ``sigma`` on the same draws, and averages. Standard errors of
    the moments are ``std / sqrt(N)``; those of the derived coefficients come
    from a grouped jackknife with ``sigma`` held fixed.
    """
    m = weight.m if m is None else m
    seed = rng if isinstance(rng, int) else None
    gen = as_generator(0 if rng is None else rng)
    t1, t2 = modular_variate_distribution(model, m).sample_coupled(n_draws, gen)
    if weight.constant_psi:
        sigma = 1.0
    elif weight.constant_phi:
        sigma = 1.0 / model.texture_mean()
    else:
        sigma = _root_on_draws(weight, t1, m)
    u = sigma * t1
    psi = weight.psi(u)
    dpsi = weight.psi_prime(u)
    # psi' is undefined on a null set (the Huber kink); drop those draws from c
    dterm = np.where(np.isnan(dpsi), 0.0, dpsi * u)
    samples = np.stack([psi**2, psi * t2, dterm])
    means = samples.mean(axis=1)
    a, b = means[0], means[1]
    c = means[2] + m * m
    ses = samples.std(axis=1, ddof=1) / np.sqrt(n_draws)
    tyler = weight.constant_psi
    theta1, theta2, gamma1, gamma2, sigma1, sigma2 = _moment_coeffs(a, b, c, m, tyler)

    # grouped jackknife for the derived coefficients
    G = min(n_groups, n_draws)
    sizes = np.full(G, n_draws // G)
    sizes[: n_draws % G] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    group_sums = np.stack([samples[:, bounds[g]:bounds[g + 1]].sum(axis=1) for g in range(G)])
    total = group_sums.sum(axis=0)
    loo = []
    for g in range(G):
        mg = (total - group_sums[g]) / (n_draws - sizes[g])
        loo.append(_moment_coeffs(mg[0], mg[1], mg[2] + m * m, m, tyler))
    loo = np.array(loo)
    jk = np.sqrt((G - 1) / G * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    names = ("theta1", "theta2", "gamma1", "gamma2", "sigma1", "sigma2")
    stderr = {"a": ses[0], "b": ses[1], "c": ses[2]}
    stderr.update(dict(zip(names, jk)))
    stderr["phi"] = float(np.sqrt((G - 1) / G * (((loo[:, 4] + loo[:, 5]) - (loo[:, 4] + loo[:, 5]).mean()) ** 2).sum()))
    return AsymCoeffs(m, float(a), float(b), float(c), float(theta1), float(theta2), float(gamma1),
                      float(gamma2), float(sigma1), float(sigma2), sigma=float(sigma),
                      source=MONTE_CARLO, n_draws=n_draws, seed=seed, stderr=stderr)


def coeffs_auto(weight, model, m=None, n_draws=10**6, rng=None):
    """Closed form where one exists, Monte Carlo otherwise."""
    try:
        return coeffs_closed_form(weight, model, m)
    except UnsupportedError:
        return coeffs_monte_carlo(weight, model, m, n_draws=n_draws, rng=rng)


@dataclass
class StructuredCov:
    Sigma: np.ndarray
    Omega: np.ndarray | None
    coeff_pair: tuple
    M: np.ndarray


def build_structured_cov(M, c1, c2, pseudo=False):
    """Dense ``c1 M^T (x) M + c2 vec(M) vec(M)^H`` and, if ``pseudo``, the
    matching pseudo-covariance ``c1 (M^T (x) M) K + c2 vec(M) vec(M)^T``."""
    M = np.asarray(M, dtype=complex)
    m = M.shape[0]
    base = np.kron(M.T, M)
    v = vec(M)
    Sigma = c1 * base + c2 * np.outer(v, v.conj())
    Omega = None
    if pseudo:
        Omega = c1 * base @ commutation_matrix(m, m) + c2 * np.outer(v, v)
    return StructuredCov(Sigma=Sigma, Omega=Omega, coeff_pair=(c1, c2), M=M)


def empirical_asymptotic_cov(Mhat, Mref, K):
    """``K`` times the trial mean of ``vec(D) vec(D)^H`` (and ``vec(D) vec(D)^T``),
    with ``D = Mhat - Mref``.

    ``Mhat`` has shape ``(T, m, m)``; ``Mref`` is ``(T, m, m)`` or a single
    ``(m, m)`` matrix. Returns ``(Sigma_emp, Omega_emp)``.
    """
    Mhat = np.asarray(Mhat)
    Mref = np.asarray(Mref)
    if Mhat.ndim != 3 or Mhat.shape[0] < 2:
        raise ParameterError("need at least two trials of shape (T, m, m)")
    if Mref.shape[-2:] != Mhat.shape[-2:] or (Mref.ndim == 3 and Mref.shape[0] != Mhat.shape[0]):
        raise ParameterError("Mhat and Mref dimensions do not match")
    return deviations_cov(Mhat - Mref, K)


def deviations_cov(D, K):
    T = D.shape[0]
    V = vec(D)
    Sigma = K * (V.T @ V.conj()) / T
    Omega = K * (V.T @ V) / T
    return Sigma, Omega


def identity_pattern_masks(m):
    """Boolean masks of the three non-null index classes of ``Sigma`` at ``M = I``."""
    idx = np.arange(m)
    diag_pos = idx + m * idx  # vec positions of diagonal entries, 0-based
    d1 = np.zeros((m * m, m * m), dtype=bool)
    d1[diag_pos, diag_pos] = True
    d2 = np.zeros_like(d1)
    off = np.setdiff1d(np.arange(m * m), diag_pos)
    d2[off, off] = True
    d3 = np.zeros_like(d1)
    d3[np.ix_(diag_pos, diag_pos)] = True
    d3 &= ~d1
    return d1, d2, d3


def extract_identity_pattern(Sigma, m):
    """Average ``Sigma`` over each class and return real ``(d1, d2, d3)``.

    ``d1`` sits at diagonal positions of vec'd diagonal entries, ``d2`` at
    diagonal positions of vec'd off-diagonal entries, ``d3`` at the
    cross-positions between distinct diagonal entries.
    """
    Sigma = np.asarray(Sigma)
    if Sigma.shape != (m * m, m * m):
        raise ParameterError(f"Sigma must be {m*m} x {m*m}")
    return tuple(float(np.real(Sigma[mask].mean())) for mask in identity_pattern_masks(m))


def identity_pattern_per_trial(D, K):
    """Per-trial contributions to ``(d1, d2, d3)`` computed directly from the
    deviation matrices ``D`` of shape ``(T, m, m)``, without forming the
    ``m^2 x m^2`` covariance. Means over trials equal
    ``extract_identity_pattern(deviations_cov(D, K)[0], m)``.
    """
    D = np.asarray(D)
    T, m, _ = D.shape
    diag = np.real(np.diagonal(D, axis1=1, axis2=2))
    abs2 = D.real**2 + D.imag**2
    total = abs2.sum(axis=(1, 2))
    dsq = (diag**2).sum(axis=1)
    d1 = K * dsq / m
    d2 = K * (total - dsq) / (m * (m - 1))
    d3 = K * (diag.sum(axis=1) ** 2 - dsq) / (m * (m - 1))
    return np.stack([d1, d2, d3], axis=1)
