"""Coupled Monte Carlo experiments.

Every trial draws its data from its own ``RngStream(seed, stream_id)`` with
``stream_id = (block << 32) + trial``, where ``block`` identifies the grid
point (and panel). Trials are processed in fixed-size chunks that may run on
a thread pool; chunk boundaries depend only on the configuration, so the
results do not depend on the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os
import time

import numpy as np

from .. import __version__
from ..asymptotics import (build_structured_cov, coeffs_closed_form, coeffs_monte_carlo,
                           identity_pattern_per_trial)
from ..ces import (CESModel, RngStream, sample_complex_gaussian_core, sample_coupled_batch,
                   sample_texture)
from ..estimators import huber_weight, m_estimate_batch, scm, student_weight, tyler_weight
from ..mahalanobis import (SCALED_BETA_PRIME, SCALED_CHI2, batched_distance, ks_statistic,
                           ref_distribution, scaled_distance_deviation_batch)
from ..numkit import linalg
from .config import FIG1, FIG2A, FIG2B, FIG3, FIG4, ConfigError

AUX_BASE = 1 << 62
JACKKNIFE_GROUPS = 20
BOOTSTRAP_REPS = 200
CHUNK_ELEMENTS = 4_000_000
MAX_CHUNK = 200


@dataclass
class Row:
    grid: float
    quantity: str
    empirical: float
    stderr: float
    theory: float


@dataclass
class ExperimentResult:
    experiment: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add(self, grid, quantity, empirical, stderr, theory=math.nan):
        self.rows.append(Row(grid, quantity, float(empirical), float(stderr), float(theory)))

    def select(self, quantity, grid=None):
        rows = [r for r in self.rows if r.quantity == quantity and (grid is None or r.grid == grid)]
        if grid is not None:
            if len(rows) != 1:
                raise KeyError(f"no unique row for ({quantity!r}, {grid})")
            return rows[0]
        return rows

    def quantities(self):
        return list(dict.fromkeys(r.quantity for r in self.rows))


def stream_id(block, trial):
    return (int(block) << 32) + int(trial)


def aux_stream(seed, k):
    return RngStream(seed, AUX_BASE + int(k))


def worker_count():
    env = os.environ.get("SCATTER_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"SCATTER_THREADS must be an integer, got {env!r}") from exc
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def chunk_size(K, m):
    return int(max(1, min(MAX_CHUNK, CHUNK_ELEMENTS // (K * m))))


def run_chunked(work, n_trials, chunk):
    """Apply ``work(start, stop)`` over consecutive chunks and merge in order.

    ``work`` returns a dict of arrays with a leading trial axis.
    """
    bounds = [(s, min(n_trials, s + chunk)) for s in range(0, n_trials, chunk)]
    workers = min(worker_count(), len(bounds))
    if workers <= 1:
        parts = [work(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: work(*ab), bounds))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def draw_trials(model, A, K, seed, block, start, stop, test_point=False):
    """Coupled ``(z, x)`` batches for trials ``start..stop-1`` of ``block``.

    With ``test_point``, each trial also draws one extra Gaussian core after
    its batch (independent of it) plus a texture, returning the core-based
    point ``x0`` and the observed point ``z0 = sqrt(tau0) x0``.
    """
    m = A.shape[0]
    M = A @ A.conj().T
    T = stop - start
    z = np.empty((T, K, m), dtype=complex)
    x = np.empty((T, K, m), dtype=complex)
    x0 = np.empty((T, m), dtype=complex)
    z0 = np.empty((T, m), dtype=complex)
    for j, i in enumerate(range(start, stop)):
        gen = RngStream(seed, stream_id(block, i)).generator()
        batch = sample_coupled_batch(model, M, K, gen)
        z[j], x[j] = batch.z, batch.x
        if test_point:
            x0[j] = batch.A @ sample_complex_gaussian_core(m, gen)
            z0[j] = math.sqrt(sample_texture(model, gen)) * x0[j]
    if test_point:
        return z, x, x0, z0
    return z, x


def group_bounds(T, groups=JACKKNIFE_GROUPS):
    G = min(groups, T)
    return np.linspace(0, T, G + 1).astype(int)


def jackknife_from_sums(group_sums, group_sizes, fn):
    """Delete-one-group jackknife standard error.

    ``group_sums`` is a list (one entry per statistic) of per-group sums;
    ``fn`` maps the list of leave-one-out means to a scalar.
    """
    sizes = np.asarray(group_sizes)
    G = sizes.size
    T = sizes.sum()
    totals = [sum(gs) for gs in group_sums]
    vals = np.asarray([fn([(tot - gs[g]) / (T - sizes[g]) for tot, gs in zip(totals, group_sums)])
                       for g in range(G)], dtype=float)
    return float(np.sqrt((G - 1) / G * ((vals - vals.mean()) ** 2).sum()))


def jackknife_se(stats, fn, groups=JACKKNIFE_GROUPS):
    """Grouped jackknife standard error of ``fn`` applied to trial means of ``stats``."""
    edges = group_bounds(stats[0].shape[0], groups)
    sums = [[s[a:b].sum(axis=0) for a, b in zip(edges[:-1], edges[1:])] for s in stats]
    return jackknife_from_sums(sums, np.diff(edges), fn)


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def variance_se(x):
    """Sample variance and its large-sample standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    v = x.var(ddof=1)
    m4 = ((x - x.mean()) ** 4).mean()
    return float(v), float(math.sqrt(max(m4 - v * v * (n - 3) / (n - 1), 0.0) / n))


def _whitener(M):
    A = linalg.cholesky(M)
    return A, np.linalg.inv(A)


def _whiten(D, Ainv):
    return Ainv @ D @ Ainv.conj().T


def _finish(result, cfg, t0, **extra):
    result.metadata = {"config": cfg.echo(), "version": __version__, **extra}
    result.wall_time = time.perf_counter() - t0
    return result


def run_fig1(cfg):
    """Frobenius distance between the empirical covariance of
    ``sqrt(K) vec(sigma*M_t - M_scm)`` and its Student closed form, over a K grid."""
    if cfg.experiment != FIG1:
        raise ConfigError("run_fig1 needs a fig1 configuration")
    t0 = time.perf_counter()
    m = cfg.m[0]
    model = CESModel.student(cfg.nu)
    weight = student_weight(m, cfg.nu)
    coeffs = coeffs_closed_form(weight, model, m)
    M = linalg.toeplitz_scatter(cfg.rho, m).astype(complex)
    A, Ainv = _whitener(M)
    Sigma_th = build_structured_cov(M, coeffs.sigma1, coeffs.sigma2).Sigma
    result = ExperimentResult(FIG1)
    for b, K in enumerate(cfg.K):
        T = cfg.runs_for(K)

        def work(start, stop, K=K, b=b):
            z, x = draw_trials(model, A, K, cfg.seed, b, start, stop)
            D = coeffs.sigma * m_estimate_batch(z, weight).estimates - scm(x)
            V = linalg.vec(D) * math.sqrt(K)
            return {"V": V, "d": identity_pattern_per_trial(_whiten(D, Ainv), K)}

        out = run_chunked(work, T, chunk_size(K, m))
        V = out["V"]
        edges = group_bounds(T)
        outer_sums = [V[a:b].T @ V[a:b].conj() for a, b in zip(edges[:-1], edges[1:])]
        norm4 = (np.abs(V) ** 2).sum(axis=1) ** 2
        norm4_sums = [norm4[a:b].sum() for a, b in zip(edges[:-1], edges[1:])]
        sizes = np.diff(edges)

        def fro(means):
            return np.linalg.norm(means[0] - Sigma_th)

        def floor(means):
            return math.sqrt(max(means[1] - np.linalg.norm(means[0]) ** 2, 0.0) / (T - 1))

        Sigma_emp = sum(outer_sums) / T
        f = fro([Sigma_emp])
        f_se = jackknife_from_sums([outer_sums], sizes, fro)
        result.add(K, "frobenius", f, f_se, 0.0)
        result.add(K, "rms_per_entry", f / m**2, f_se / m**2, 0.0)
        result.add(K, "noise_floor", floor([Sigma_emp, norm4.mean()]),
                   jackknife_from_sums([outer_sums, norm4_sums], sizes, floor), math.nan)
        for j, (name, th) in enumerate((("d1", coeffs.phi), ("d2", coeffs.sigma1), ("d3", coeffs.sigma2))):
            mu, se = mean_se(out["d"][:, j])
            result.add(K, name, mu, se, th)
    return _finish(result, cfg, t0, estimator=weight.label(), model=model.describe(),
                   theory={"sigma1": coeffs.sigma1, "sigma2": coeffs.sigma2})


def _robust_setup(name, m, model, cfg, seed_key):
    """Weight, consistency factor and coefficients for a robust estimator."""
    if name == "tyler":
        w = tyler_weight(m)
    elif name == "student":
        w = student_weight(m, cfg.nu)
    elif name == "huber":
        w = huber_weight(m, cfg.q)
    else:
        raise ConfigError(f"unknown estimator {name!r}")
    try:
        coeffs = coeffs_closed_form(w, model, m)
    except NotImplementedError:
        coeffs = coeffs_monte_carlo(w, model, m, n_draws=cfg.coeff_draws,
                                    rng=aux_stream(cfg.seed, seed_key))
    return w, coeffs


def run_fig2(cfg, panel=None):
    """Second diagonal entry ``d2`` of the empirical asymptotic covariances over an m grid.

    Panel ``a``: Student-t data with Tyler and Student estimators. Panel
    ``b``: Gaussian data with a fixed fraction of t outliers and Tyler and
    Huber estimators. Each robust estimator is centered both on the true
    scatter and on the coupled SCM.
    """
    panel = panel or ("a" if cfg.experiment == FIG2A else "b")
    if panel not in ("a", "b"):
        raise ConfigError("fig2 panel must be 'a' or 'b'")
    t0 = time.perf_counter()
    if panel == "a":
        model, robust = CESModel.student(cfg.nu), "student"
    else:
        model, robust = CESModel.mixture(cfg.nu, cfg.contamination), "huber"
    K = cfg.K[0]
    result = ExperimentResult(FIG2A if panel == "a" else FIG2B)
    sigmas = {}
    for b, m in enumerate(cfg.m):
        M = linalg.toeplitz_scatter(cfg.rho, m).astype(complex)
        A, Ainv = _whitener(M)
        wt, ct = _robust_setup("tyler", m, model, cfg, 0)
        wr, cr = _robust_setup(robust, m, model, cfg, 1000 + b)
        sigmas[m] = cr.sigma
        T = cfg.runs_for(K)

        def work(start, stop, m=m, b=b, A=A, Ainv=Ainv, wt=wt, wr=wr, cr=cr):
            z, x = draw_trials(model, A, K, cfg.seed, b, start, stop)
            S = scm(x)
            Mt = m_estimate_batch(z, wt).estimates
            Mr = cr.sigma * m_estimate_batch(z, wr).estimates
            d2 = lambda D: identity_pattern_per_trial(_whiten(D, Ainv), K)[:, 1]
            return {"scm_true": d2(S - M), "tyler_true": d2(Mt - M), f"{robust}_true": d2(Mr - M),
                    "tyler_scm": d2(Mt - S), f"{robust}_scm": d2(Mr - S)}

        out = run_chunked(work, T, chunk_size(K, m))
        theory = {"scm_true": 1.0, "tyler_true": ct.theta1, f"{robust}_true": cr.theta1,
                  "tyler_scm": ct.sigma1, f"{robust}_scm": cr.sigma1}
        for q, vals in out.items():
            mu, se = mean_se(vals)
            result.add(m, q, mu, se, theory[q])
    return _finish(result, cfg, t0, panel=panel, model=model.describe(), estimators=["tyler", robust],
                   sigma={str(k): v for k, v in sigmas.items()})


def run_fig3(cfg):
    """Variance of the normalized Mahalanobis deviation over a K grid.

    For each panel two centerings are reported: on the true-scatter
    distance (``*_true``) and on the coupled-SCM distance (``*_scm``). The
    unsuffixed quantities use one test point per panel, fixed across trials;
    ``*_marginal`` quantities draw a fresh test point per trial, independent
    of the estimation batch.
    """
    if cfg.experiment != FIG3:
        raise ConfigError("run_fig3 needs a fig3 configuration")
    t0 = time.perf_counter()
    m = cfg.m[0]
    M = linalg.toeplitz_scatter(cfg.rho, m).astype(complex)
    A, _ = _whitener(M)
    panels = ("tyler", "huber") if cfg.panel == "both" else (cfg.panel,)
    result = ExperimentResult(FIG3)
    meta = {}
    for p_idx, name in enumerate(panels):
        model = CESModel.student(cfg.nu) if name == "tyler" else CESModel.mixture(cfg.nu, cfg.contamination)
        w, coeffs = _robust_setup(name, m, model, cfg, 2000 + p_idx)
        gen = aux_stream(cfg.seed, 3000 + p_idx).generator()
        z_fixed = math.sqrt(sample_texture(model, gen)) * (A @ sample_complex_gaussian_core(m, gen))
        meta[name] = {"model": model.describe(), "sigma": coeffs.sigma,
                      "z_fixed": [[float(v.real), float(v.imag)] for v in z_fixed]}
        for k_idx, K in enumerate(cfg.K):
            block = (p_idx + 1) * 1024 + k_idx
            T = cfg.runs_for(K)

            def work(start, stop, K=K, block=block, model=model, w=w, coeffs=coeffs, z_fixed=z_fixed):
                z, x, _, z0 = draw_trials(model, A, K, cfg.seed, block, start, stop, test_point=True)
                Mr = m_estimate_batch(z, w).estimates
                S = scm(x)
                out = {}
                for tag, pt in (("", z_fixed), ("_marginal", z0)):
                    out["true" + tag] = scaled_distance_deviation_batch(pt, Mr, coeffs.sigma, M, M, K)
                    out["scm" + tag] = scaled_distance_deviation_batch(pt, Mr, coeffs.sigma, S, M, K)
                return out

            out = run_chunked(work, T, chunk_size(K, m))
            for tag in ("", "_marginal"):
                for centering, th in (("true", coeffs.theta1 + coeffs.theta2), ("scm", coeffs.phi)):
                    v, se = variance_se(out[centering + tag])
                    result.add(K, f"{name}_{centering}{tag}", v, se, th)
    return _finish(result, cfg, t0, panels=meta)


def run_fig4(cfg):
    """Law of the squared Mahalanobis distance built from the Student estimator.

    Each trial estimates the scatter from ``K`` t-distributed samples and
    evaluates the distance of a fresh test point drawn independently of the
    batch: its Gaussian core (``test_point='core'``, the default) or the
    observed t-distributed point (``'observed'``).
    """
    if cfg.experiment != FIG4:
        raise ConfigError("run_fig4 needs a fig4 configuration")
    t0 = time.perf_counter()
    m, K = cfg.m[0], cfg.K[0]
    model = CESModel.student(cfg.nu)
    w, coeffs = _robust_setup("student", m, model, cfg, 4000)
    M = linalg.toeplitz_scatter(cfg.rho, m).astype(complex)
    A, _ = _whitener(M)
    T = cfg.runs_for(K)

    def work(start, stop):
        z, _, x0, z0 = draw_trials(model, A, K, cfg.seed, 0, start, stop, test_point=True)
        Mr = coeffs.sigma * m_estimate_batch(z, w).estimates
        pt = x0 if cfg.test_point == "core" else z0
        return {"d": batched_distance(pt, Mr)}

    d = run_chunked(work, T, chunk_size(K, m))["d"]
    refs = {"beta_prime": ref_distribution(SCALED_BETA_PRIME, m, K),
            "chi2": ref_distribution(SCALED_CHI2, m)}
    result = ExperimentResult(FIG4)
    edges = np.linspace(0.0, float(d.max()), cfg.bins + 1)
    counts, _ = np.histogram(d, bins=edges)
    width = np.diff(edges)
    dens = counts / (T * width)
    dens_se = np.sqrt(counts) / (T * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    pdfs = {k: r.pdf(centers) for k, r in refs.items()}
    for i, c in enumerate(centers):
        for k in refs:
            result.add(float(c), f"density_vs_{k}", dens[i], dens_se[i], pdfs[k][i])
    gen = aux_stream(cfg.seed, 5000).generator()
    boot = gen.integers(0, T, size=(BOOTSTRAP_REPS, T))
    for k, ref in refs.items():
        ks = ks_statistic(d, ref)
        reps = [ks_statistic(d[idx], ref) for idx in boot]
        result.add(K, f"ks_{k}", ks, float(np.std(reps, ddof=1)), 0.0)
    mu, se = mean_se(d)
    result.add(K, "mean", mu, se, refs["beta_prime"].mean())
    return _finish(result, cfg, t0, estimator=w.label(), model=model.describe(),
                   test_point=cfg.test_point, histogram_mass=float((dens * width).sum()))


def run_experiment(cfg):
    if cfg.experiment == FIG1:
        return run_fig1(cfg)
    if cfg.experiment in (FIG2A, FIG2B):
        return run_fig2(cfg)
    if cfg.experiment == FIG3:
        return run_fig3(cfg)
    if cfg.experiment == FIG4:
        return run_fig4(cfg)
    raise ConfigError(f"{cfg.experiment} is not a Monte Carlo experiment")
