"""Sampling from compound-Gaussian CES models via Gaussian cores.

Every supported model writes an observation as ``z = sqrt(tau) * x`` with
``x = A n``, ``n ~ CN(0, I)`` and a positive texture ``tau`` independent of
``n``. The fictive Gaussian sample ``x`` shares its core with ``z``, which is
what couples an M-estimator built on ``z`` to the SCM built on ``x``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ParameterError
from .numkit import linalg
from .numkit.special import reg_incomplete_beta, reg_incomplete_gamma_P

GAUSSIAN = "gaussian"
STUDENT = "student"
MIXTURE = "mixture"


@dataclass(frozen=True)
class CESModel:
    """Distribution family descriptor.

    ``kind`` is one of ``"gaussian"``, ``"student"`` or ``"mixture"``. The
    mixture draws a fixed fraction ``contamination`` of outliers with a
    Student-t(``nu``) texture; the remaining samples are Gaussian.
    """

    kind: str = GAUSSIAN
    nu: float | None = None
    contamination: float | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, STUDENT, MIXTURE):
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.kind in (STUDENT, MIXTURE):
            if self.nu is None or not (0 < self.nu < math.inf):
                raise ParameterError(f"degrees of freedom must satisfy 0 < nu < inf, got {self.nu}")
        if self.kind == MIXTURE:
            c = self.contamination
            if c is None or not 0.0 < c < 1.0:
                raise ParameterError(f"contamination must lie in (0, 1), got {c}")

    @classmethod
    def gaussian(cls):
        return cls(GAUSSIAN)

    @classmethod
    def student(cls, nu):
        return cls(STUDENT, nu=float(nu))

    @classmethod
    def mixture(cls, nu=2.0, contamination=0.05):
        return cls(MIXTURE, nu=float(nu), contamination=float(contamination))

    def n_outliers(self, K):
        """Number of outlier samples in a batch of size ``K``."""
        if self.kind != MIXTURE:
            return 0
        return int(round(self.contamination * K))

    def texture_mean(self):
        """``E[tau]``; infinite for Student textures with ``nu <= 2``."""
        if self.kind == GAUSSIAN:
            return 1.0
        student_mean = self.nu / (self.nu - 2.0) if self.nu > 2 else math.inf
        if self.kind == STUDENT:
            return student_mean
        c = self.contamination
        return (1.0 - c) + c * student_mean

    def describe(self):
        if self.kind == GAUSSIAN:
            return "gaussian"
        if self.kind == STUDENT:
            return f"student(nu={self.nu:g})"
        return f"mixture(nu={self.nu:g}, contamination={self.contamination:g})"


@dataclass(frozen=True)
class RngStream:
    """Seed plus stream id for a counter-based (Philox) generator.

    The same ``(seed, stream_id)`` always yields the same draws, so trial
    ``i`` of an experiment can be generated independently of any other.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        mask = (1 << 64) - 1
        ss = np.random.SeedSequence([self.seed & mask, self.stream_id & mask])
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    """Accept an :class:`RngStream`, a ``numpy`` Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_complex_gaussian_core(m, rng, size=None):
    """Circular standard complex normal draws, ``E[n n^H] = I``.

    Returns shape ``(m,)`` or ``(size, m)``.
    """
    if m < 1:
        raise ParameterError("m must be >= 1")
    gen = as_generator(rng)
    shape = (m,) if size is None else (size, m)
    re = gen.standard_normal(shape)
    im = gen.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


def _inverse_gamma(gen, nu, size):
    # tau ~ IG(nu/2, nu/2)  <=>  1/tau ~ Gamma(shape nu/2, rate nu/2)
    return 1.0 / gen.gamma(0.5 * nu, 2.0 / nu, size=size)


def sample_texture(model, rng, size=None):
    """Texture draws for ``model``.

    Gaussian textures are identically 1. For the mixture, an array draw puts
    exactly ``round(contamination * size)`` Student textures at uniformly
    chosen positions; a scalar draw is an outlier with probability
    ``contamination``.
    """
    gen = as_generator(rng)
    if model.kind == GAUSSIAN:
        return 1.0 if size is None else np.ones(size)
    if model.kind == STUDENT:
        tau = _inverse_gamma(gen, model.nu, size)
        return float(tau) if size is None else tau
    if size is None:
        if gen.random() < model.contamination:
            return float(_inverse_gamma(gen, model.nu, None))
        return 1.0
    tau = np.ones(size)
    n_out = model.n_outliers(size)
    if n_out:
        pos = gen.choice(size, size=n_out, replace=False)
        tau[np.sort(pos)] = _inverse_gamma(gen, model.nu, n_out)
    return tau


@dataclass
class CoupledBatch:
    """``K`` paired samples sharing Gaussian cores.

    Rows are samples: ``x[k] = A @ cores[k]`` and ``z[k] = sqrt(textures[k]) * x[k]``.
    """

    cores: np.ndarray
    textures: np.ndarray
    z: np.ndarray
    x: np.ndarray
    A: np.ndarray

    @property
    def K(self):
        return self.z.shape[0]

    @property
    def m(self):
        return self.z.shape[1]


def sample_coupled_batch(model, M, K, rng):
    """Draw ``K`` cores and textures and build the coupled ``(z, x)`` pairs.

    ``A`` is the lower Cholesky factor of ``M``.
    """
    if K < 1:
        raise ParameterError("K must be >= 1")
    M = np.asarray(M)
    A = linalg.cholesky(M)
    gen = as_generator(rng)
    m = M.shape[0]
    cores = sample_complex_gaussian_core(m, gen, size=K)
    textures = sample_texture(model, gen, size=K)
    x = cores @ A.T
    z = np.sqrt(textures)[:, None] * x
    return CoupledBatch(cores=cores, textures=textures, z=z, x=x, A=A)


def sample_coupled_trials(model, M, K, seed, trials):
    """Stack coupled batches for the given trial indices.

    Trial ``i`` is drawn from ``RngStream(seed, i)`` so the result for a trial
    does not depend on which other trials are generated alongside it.
    Returns ``(z, x, textures)`` with shapes ``(T, K, m)``, ``(T, K, m)``, ``(T, K)``.
    """
    batches = [sample_coupled_batch(model, M, K, RngStream(seed, int(i))) for i in trials]
    z = np.stack([b.z for b in batches])
    x = np.stack([b.x for b in batches])
    tau = np.stack([b.textures for b in batches])
    return z, x, tau


class ModularVariate:
    """Law of ``t = z^H M^{-1} z`` under a model, for dimension ``m``.

    Gaussian: ``Gamma(m, 1)`` (i.e. half a chi-square with ``2m`` dof).
    Student-t: ``m F(2m, nu)``, which equals ``tau * Gamma(m, 1)``.
    Mixture: the matching two-component mixture.
    """

    def __init__(self, model, m):
        if m < 1:
            raise ParameterError("m must be >= 1")
        self.model = model
        self.m = m

    def _student_cdf(self, t):
        nu = self.model.nu
        y = 2.0 * t / (2.0 * t + nu)
        return reg_incomplete_beta(self.m, 0.5 * nu, y)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        t = np.maximum(t, 0.0)
        gauss = reg_incomplete_gamma_P(self.m, t)
        if self.model.kind == GAUSSIAN:
            return gauss
        student = self._student_cdf(t)
        if self.model.kind == STUDENT:
            return student
        c = self.model.contamination
        return (1.0 - c) * gauss + c * student

    def mean(self):
        return self.m * self.model.texture_mean()

    def sample(self, n, rng):
        """Compound construction: ``tau * Gamma(m, 1)``."""
        gen = as_generator(rng)
        t2 = gen.gamma(self.m, 1.0, size=n)
        tau = sample_texture(self.model, gen, size=n)
        return tau * t2

    def sample_coupled(self, n, rng):
        """Return ``(t1, t2)`` with ``t2 ~ Gamma(m, 1)`` and ``t1 = tau * t2``."""
        gen = as_generator(rng)
        t2 = gen.gamma(self.m, 1.0, size=n)
        tau = sample_texture(self.model, gen, size=n)
        return tau * t2, t2

    def sample_general(self, n, rng):
        """General stochastic-representation route ``z = sqrt(Q)/||n|| A n``.

        Draws ``Q`` directly (an F variate for the Student law) and Gaussian
        cores, and returns the realized quadratic forms. Independent of the
        compound construction used by :meth:`sample`; used for cross-checks.
        """
        gen = as_generator(rng)
        m = self.m
        cores = sample_complex_gaussian_core(m, gen, size=n)
        norms2 = np.einsum("ij,ij->i", cores.view(np.float64), cores.view(np.float64))
        gaussian_q = norms2  # ||n||^2 ~ Gamma(m, 1)
        if self.model.kind == GAUSSIAN:
            q = gaussian_q
        else:
            student_q = m * gen.f(2 * m, self.model.nu, size=n)
            if self.model.kind == STUDENT:
                q = student_q
            else:
                outlier = gen.random(n) < self.model.contamination
                q = np.where(outlier, student_q, gen.gamma(m, 1.0, size=n))
        # with M = I, z^H z = (Q / ||n||^2) ||n||^2
        scale = np.sqrt(q / norms2)
        z = scale[:, None] * cores
        return np.einsum("ij,ij->i", z.view(np.float64), z.view(np.float64))


def modular_variate_distribution(model, m):
    return ModularVariate(model, m)
