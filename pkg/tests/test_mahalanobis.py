import numpy as np
import pytest
import scipy.integrate
import scipy.stats
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from robscatter.asymptotics import coeffs_closed_form
from robscatter.ces import CESModel, RngStream, sample_complex_gaussian_core, sample_coupled_trials
from robscatter.errors import ParameterError, SingularMatrixError
from robscatter.estimators import m_estimate_batch, scm_weight, student_weight, tyler_weight
from robscatter.mahalanobis import (SCALED_BETA_PRIME, SCALED_CHI2, DistanceSample, batched_distance,
                                    ks_statistic, mahalanobis_sq, phi_variance, ref_distribution,
                                    scaled_distance_deviation, scaled_distance_deviation_batch)


def rand_c(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestDistance:
    def test_examples(self):
        z = np.array([1 + 2j, -1j, 3])
        assert_allclose(mahalanobis_sq(z, np.eye(3)), np.linalg.norm(z) ** 2)
        assert_allclose(mahalanobis_sq(np.array([2, 0]), np.diag([4.0, 1.0])), 1.0)

    def test_gaussian_mean(self):
        m, n = 4, 10**6
        z = sample_complex_gaussian_core(m, RngStream(0), size=n)
        d = mahalanobis_sq(z, np.eye(m))
        assert abs(d.mean() - m) < 3 * np.sqrt(m / n)

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            mahalanobis_sq(np.ones(2), np.diag([1.0, 0.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(-20, 20).filter(lambda a: abs(a) > 1e-3))
    def test_scaling(self, seed, m, alpha):
        rng = np.random.default_rng(seed)
        G = rand_c(rng, m, m)
        M = G @ G.conj().T + np.eye(m)
        z = rand_c(rng, m)
        assert_allclose(mahalanobis_sq(alpha * z, M), alpha**2 * mahalanobis_sq(z, M), rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_affine_invariance(self, seed, m):
        rng = np.random.default_rng(seed)
        G = rand_c(rng, m, m)
        M = G @ G.conj().T + np.eye(m)
        B = rand_c(rng, m, m) + 3 * np.eye(m)
        z = rand_c(rng, m)
        a = mahalanobis_sq(z, M)
        b = mahalanobis_sq(B @ z, B @ M @ B.conj().T)
        assert abs(a - b) <= 1e-10 * max(1.0, a)

    def test_batched(self):
        rng = np.random.default_rng(1)
        Ms = np.stack([np.eye(3) * (i + 1) for i in range(4)])
        z = rand_c(rng, 3)
        assert_allclose(batched_distance(z, Ms), np.linalg.norm(z) ** 2 / np.arange(1, 5))
        Z = rand_c(rng, 4, 3)
        assert_allclose(batched_distance(Z, Ms), [mahalanobis_sq(Z[i], Ms[i]) for i in range(4)])
        assert_allclose(batched_distance(Z, np.eye(3)), np.linalg.norm(Z, axis=1) ** 2)

    def test_distance_sample(self):
        assert DistanceSample(1.5).value == 1.5
        with pytest.raises(ParameterError):
            DistanceSample(-1.0)


class TestReference:
    def test_moments(self):
        chi = ref_distribution(SCALED_CHI2, 7)
        assert chi.mean() == 7 and chi.var() == 7
        bp = ref_distribution(SCALED_BETA_PRIME, 10, 100)
        assert_allclose(bp.mean(), 100 * 10 / 90, rtol=1e-14)
        x = bp.sample(2 * 10**5, RngStream(0))
        assert abs(x.mean() - bp.mean()) < 4 * np.sqrt(bp.var() / x.size)
        assert_allclose(x.var(), bp.var(), rtol=0.03)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            ref_distribution(SCALED_BETA_PRIME, 10, 10)
        with pytest.raises(ParameterError):
            ref_distribution(SCALED_BETA_PRIME, 10)
        with pytest.raises(ParameterError):
            ref_distribution("lognormal", 3)
        with pytest.raises(ParameterError):
            ref_distribution(SCALED_CHI2, 0)

    @pytest.mark.parametrize("args", [(SCALED_CHI2, 5, None), (SCALED_BETA_PRIME, 5, 20),
                                      (SCALED_BETA_PRIME, 10, 1000), (SCALED_BETA_PRIME, 1, 2)])
    def test_cdf_and_pdf(self, args):
        d = ref_distribution(*args)
        y = np.linspace(0, 20 * d.m + 50, 500)
        F = d.cdf(y)
        assert F[0] == 0 and np.all(np.diff(F) >= -1e-15) and np.all(F <= 1)
        assert d.cdf(np.inf) == 1
        total, _ = scipy.integrate.quad(d.pdf, 0, np.inf, limit=200)
        assert abs(total - 1) < 1e-6
        mid = d.mean() if np.isfinite(d.mean()) else d.m
        assert_allclose(scipy.integrate.quad(d.pdf, 0, mid)[0], d.cdf(mid), atol=1e-8)

    def test_against_scipy(self):
        m, K = 10, 100
        y = np.linspace(0.1, 40, 100)
        bp = ref_distribution(SCALED_BETA_PRIME, m, K)
        assert_allclose(bp.cdf(y), scipy.stats.betaprime(m, K - m + 1).cdf(y / K), rtol=1e-10)
        assert_allclose(bp.pdf(y), scipy.stats.betaprime(m, K - m + 1).pdf(y / K) / K, rtol=1e-10)
        chi = ref_distribution(SCALED_CHI2, m)
        assert_allclose(chi.cdf(y), scipy.stats.chi2(2 * m).cdf(2 * y), rtol=1e-12)

    def test_large_K_limit(self):
        y = np.linspace(0, 40, 2000)
        bp = ref_distribution(SCALED_BETA_PRIME, 5, 10**5)
        chi = ref_distribution(SCALED_CHI2, 5)
        assert np.abs(bp.cdf(y) - chi.cdf(y)).max() < 0.005

    def test_scm_distance_law(self):
        m, K = 3, 10
        z, _, _ = sample_coupled_trials(CESModel.gaussian(), np.eye(m), K, 1, range(5000))
        S = np.einsum("tki,tkj->tij", z, z.conj()) / K
        x0 = sample_complex_gaussian_core(m, RngStream(1, 99), size=5000)
        d = batched_distance(x0, S)
        assert ks_statistic(d, ref_distribution(SCALED_BETA_PRIME, m, K)) < 0.025
        assert ks_statistic(d, ref_distribution(SCALED_CHI2, m)) > 0.05


class TestPhiAndDeviation:
    def test_phi(self):
        assert_allclose(phi_variance(coeffs_closed_form(tyler_weight(10), CESModel.student(2))), 0.19)
        assert_allclose(phi_variance(coeffs_closed_form(student_weight(5, 2.0), CESModel.student(2.0))), 4 / 3)
        assert phi_variance(coeffs_closed_form(scm_weight(4), CESModel.gaussian())) == 0

    def test_zero_when_equal(self):
        rng = np.random.default_rng(0)
        G = rand_c(rng, 3, 3)
        M = G @ G.conj().T + np.eye(3)
        z = rand_c(rng, 3)
        assert abs(scaled_distance_deviation(z, M / 2, 2.0, M, np.eye(3), 100)) < 1e-12
        with pytest.raises(ParameterError):
            scaled_distance_deviation(z, M, 0.0, M, M, 100)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        Ms = np.stack([np.eye(2) * (1 + 0.1 * i) for i in range(3)])
        Ss = np.stack([np.eye(2) * (1 - 0.05 * i) for i in range(3)])
        z = rand_c(rng, 2)
        got = scaled_distance_deviation_batch(z, Ms, 1.3, Ss, np.eye(2), 50)
        ref = [scaled_distance_deviation(z, Ms[i], 1.3, Ss[i], np.eye(2), 50) for i in range(3)]
        assert_allclose(got, ref, rtol=1e-13)

    def _variances(self, weight, model, m, K, T, seed):
        z_fixed = sample_complex_gaussian_core(m, RngStream(seed, 10**6))
        z = np.empty((T, K, m), complex)
        x = np.empty_like(z)
        for s in range(0, T, 250):
            z[s:s + 250], x[s:s + 250], _ = sample_coupled_trials(model, np.eye(m), K, seed, range(s, s + 250))
        rob = m_estimate_batch(z, weight).estimates
        S = np.einsum("tki,tkj->tij", x, x.conj()) / K
        dev_scm = scaled_distance_deviation_batch(z_fixed, rob, 1.0, S, np.eye(m), K)
        dev_true = scaled_distance_deviation_batch(z_fixed, rob, 1.0, np.eye(m), np.eye(m), K)
        return dev_scm.var(ddof=1), dev_true.var(ddof=1)

    def test_student_variance(self):
        v_scm, _ = self._variances(student_weight(5, 2.0), CESModel.student(2.0), 5, 1000, 2000, 3)
        assert abs(v_scm - 4 / 3) < 0.15 * 4 / 3

    def test_tyler_variance_ordering(self):
        v_scm, v_true = self._variances(tyler_weight(10), CESModel.student(2.0), 10, 141, 1000, 4)
        assert v_scm < v_true


class TestKS:
    def test_self_consistency(self):
        d = ref_distribution(SCALED_BETA_PRIME, 10, 100)
        assert ks_statistic(d.sample(10**4, RngStream(5)), d) < 0.02

    def test_constant_at_median(self):
        d = ref_distribution(SCALED_CHI2, 4)
        med = scipy.stats.gamma(4).median()
        assert_allclose(ks_statistic(np.full(100, med), d), 0.5, atol=1e-9)

    def test_bounds_and_scipy(self):
        d = ref_distribution(SCALED_CHI2, 3)
        x = np.random.default_rng(6).gamma(3.3, 1.0, size=500)
        ks = ks_statistic(x, d)
        assert 0 <= ks <= 1
        assert_allclose(ks, scipy.stats.kstest(x, scipy.stats.gamma(3).cdf).statistic, rtol=1e-10)

    def test_too_few(self):
        with pytest.raises(ParameterError):
            ks_statistic(np.ones(9), ref_distribution(SCALED_CHI2, 2))
