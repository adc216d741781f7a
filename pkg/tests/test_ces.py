import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from robscatter.ces import (CESModel, RngStream, modular_variate_distribution,
                            sample_complex_gaussian_core, sample_coupled_batch,
                            sample_coupled_trials, sample_texture)
from robscatter.errors import ParameterError, SingularMatrixError
from robscatter.numkit import chi2_quantile, toeplitz_scatter


class TestModel:
    @pytest.mark.parametrize("kw", [dict(kind="student", nu=0.0), dict(kind="student", nu=-1.0),
                                    dict(kind="student"), dict(kind="mixture", nu=2.0, contamination=0.0),
                                    dict(kind="mixture", nu=2.0, contamination=1.0), dict(kind="cauchy")])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            CESModel(**kw)

    def test_outlier_count_and_mean(self):
        mix = CESModel.mixture(2.0, 0.05)
        assert mix.n_outliers(1000) == 50
        assert mix.n_outliers(10) == 0
        assert CESModel.student(2).texture_mean() == np.inf
        assert_allclose(CESModel.student(4).texture_mean(), 2.0)
        assert_allclose(CESModel.mixture(4.0, 0.1).texture_mean(), 0.9 + 0.2)


class TestCore:
    def test_covariance_and_circularity(self):
        n = sample_complex_gaussian_core(3, RngStream(1), size=100_000)
        C = n.T @ n.conj() / n.shape[0]
        P = n.T @ n / n.shape[0]
        assert np.linalg.norm(C - np.eye(3)) < 0.03
        assert np.linalg.norm(P) < 0.03

    def test_determinism(self):
        a = sample_complex_gaussian_core(4, RngStream(7, 3))
        b = sample_complex_gaussian_core(4, RngStream(7, 3))
        c = sample_complex_gaussian_core(4, RngStream(7, 4))
        assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rejects_m(self):
        with pytest.raises(ParameterError):
            sample_complex_gaussian_core(0, RngStream(0))


class TestTexture:
    def test_gaussian(self):
        assert sample_texture(CESModel.gaussian(), RngStream(0)) == 1.0
        assert_array_equal(sample_texture(CESModel.gaussian(), RngStream(0), size=5), np.ones(5))

    def test_student_inverse_mean(self):
        tau = sample_texture(CESModel.student(4), RngStream(2), size=10**6)
        assert abs((1 / tau).mean() - 1) < 0.005
        assert tau.min() > 0

    def test_student_nu2_heavy_tail(self):
        tau = sample_texture(CESModel.student(2), RngStream(3), size=10**6)
        # IG(1, 1): median 1/ln 2, no finite mean
        assert_allclose(np.median(tau), 1 / np.log(2), rtol=0.01)
        running = np.cumsum(tau) / np.arange(1, tau.size + 1)
        assert running[-1] > running[999]

    def test_student_law(self):
        nu = 3.0
        tau = sample_texture(CESModel.student(nu), RngStream(4), size=50_000)
        ks = scipy.stats.kstest(tau, scipy.stats.invgamma(nu / 2, scale=nu / 2).cdf)
        assert ks.pvalue > 1e-3

    def test_mixture_exact_count(self):
        tau = sample_texture(CESModel.mixture(2.0, 0.05), RngStream(5), size=1000)
        assert (tau != 1.0).sum() == 50


class TestCoupledBatch:
    def test_invariants(self):
        M = toeplitz_scatter(0.5, 4)
        b = sample_coupled_batch(CESModel.student(2), M, 50, RngStream(0))
        assert_array_equal(b.x, b.cores @ b.A.T)
        assert_array_equal(b.z, np.sqrt(b.textures)[:, None] * b.x)
        assert_allclose(b.A @ b.A.conj().T, M, atol=1e-14)
        assert b.K == 50 and b.m == 4

    def test_gaussian_equal(self):
        b = sample_coupled_batch(CESModel.gaussian(), np.eye(3), 20, RngStream(0))
        assert_array_equal(b.z, b.x)
        assert_array_equal(b.textures, 1.0)

    def test_mixture_positions(self):
        b = sample_coupled_batch(CESModel.mixture(), np.eye(2), 200, RngStream(1))
        assert (b.textures != 1).sum() == 10

    def test_x_covariance(self):
        b = sample_coupled_batch(CESModel.student(2), np.eye(3), 10_000, RngStream(2))
        C = b.x.T @ b.x.conj() / b.K
        # per-entry sd is about 1/sqrt(K)
        assert np.abs(C - np.eye(3)).max() < 4 / np.sqrt(b.K)

    def test_gaussian_modular_moments(self):
        b = sample_coupled_batch(CESModel.gaussian(), np.eye(4), 10**6, RngStream(3))
        t = np.einsum("ki,ki->k", b.x.conj(), b.x).real
        assert abs(t.mean() - 4) < 3 * np.sqrt(4 / 10**6)
        assert abs(t.var() - 4) < 0.05

    @pytest.mark.parametrize("model", [CESModel.gaussian(), CESModel.student(10), CESModel.mixture()])
    def test_circularity(self, model):
        K, m = 10_000, 3
        b = sample_coupled_batch(model, np.eye(m), K, RngStream(4))
        z = b.z
        if model.kind == "mixture":
            # t(2) outliers have no second moment; check the self-normalized samples
            z = z / np.linalg.norm(z, axis=1, keepdims=True) * np.sqrt(m)
        P = z.T @ z / K
        assert np.linalg.norm(P) < 4 / np.sqrt(K) * m

    def test_texture_independence(self):
        b = sample_coupled_batch(CESModel.student(5), np.eye(2), 10**5, RngStream(5))
        norms = (np.abs(b.cores) ** 2).sum(axis=1)
        r = np.corrcoef(np.log(b.textures), norms)[0, 1]
        assert abs(r) < 3 / np.sqrt(10**5)

    def test_determinism_and_trials(self):
        model = CESModel.student(2)
        a = sample_coupled_batch(model, np.eye(3), 30, RngStream(9, 2))
        b = sample_coupled_batch(model, np.eye(3), 30, RngStream(9, 2))
        assert_array_equal(a.z, b.z)
        z, x, tau = sample_coupled_trials(model, np.eye(3), 30, 9, [1, 2])
        assert_array_equal(z[1], a.z)
        assert z.shape == (2, 30, 3) and tau.shape == (2, 30)

    def test_non_pd(self):
        with pytest.raises(SingularMatrixError):
            sample_coupled_batch(CESModel.gaussian(), np.diag([1.0, -1.0]), 5, RngStream(0))

    def test_rejects_K(self):
        with pytest.raises(ParameterError):
            sample_coupled_batch(CESModel.gaussian(), np.eye(2), 0, RngStream(0))


class TestModularVariate:
    def test_gaussian_median(self):
        d = modular_variate_distribution(CESModel.gaussian(), 5)
        assert_allclose(d.cdf(chi2_quantile(10, 0.5) / 2), 0.5, rtol=1e-12)

    def test_student_cdf_matches_scaled_f(self):
        m, nu = 5, 2.0
        d = modular_variate_distribution(CESModel.student(nu), m)
        t = np.linspace(0.01, 60, 50)
        assert_allclose(d.cdf(t), scipy.stats.f(2 * m, nu).cdf(t / m), rtol=1e-10)

    def test_two_sampling_paths(self):
        d = modular_variate_distribution(CESModel.student(2), 5)
        a = d.sample(10**5, RngStream(1))
        b = d.sample_general(10**5, RngStream(2))
        assert scipy.stats.ks_2samp(a, b).statistic < 0.01
        assert scipy.stats.kstest(a, d.cdf).statistic < 0.01

    @settings(max_examples=10, deadline=None)
    @given(st.sampled_from(["gaussian", "student", "mixture"]), st.integers(1, 20))
    def test_cdf_bounds(self, kind, m):
        model = {"gaussian": CESModel.gaussian(), "student": CESModel.student(3),
                 "mixture": CESModel.mixture()}[kind]
        d = modular_variate_distribution(model, m)
        F = d.cdf(np.linspace(0, 50 * m, 200))
        assert F[0] == 0 and np.all(np.diff(F) >= -1e-15) and F[-1] <= 1

    def test_mixture_sampler(self):
        d = modular_variate_distribution(CESModel.mixture(2.0, 0.2), 3)
        t = d.sample(50_000, RngStream(3))
        assert scipy.stats.kstest(t, d.cdf).statistic < 0.012

    def test_coupled_draws(self):
        t1, t2 = modular_variate_distribution(CESModel.student(2), 5).sample_coupled(1000, RngStream(0))
        assert np.all(t1 > 0) and np.all(t2 > 0)
        assert not np.array_equal(t1, t2)
