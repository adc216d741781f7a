"""Command-line entry point.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
numerical or I/O failures. Failures print a one-line JSON error record on
stderr.
"""

import argparse
import json
import sys

import numpy as np

from ..asymptotics import coeffs_closed_form, coeffs_monte_carlo
from ..ces import CESModel, RngStream, sample_coupled_batch
from ..errors import ParameterError, ScatterError, UnsupportedError
from ..estimators import (DEFAULT_MAX_ITER, DEFAULT_TOL, m_estimate, weight_library)
from ..numkit.linalg import toeplitz_scatter
from . import io as rio
from .config import FIGURES, ConfigError, ExperimentConfig
from .experiments import run_experiment

USAGE_ERRORS = (ConfigError, ParameterError, rio.InputFormatError, UnsupportedError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _model_from(name, nu, contamination):
    if name == "gaussian":
        return CESModel.gaussian()
    if name == "student":
        return CESModel.student(nu)
    return CESModel.mixture(nu, contamination)


def build_parser():
    p = _Parser(prog="robscatter", description="Robust scatter estimation and coupled Monte Carlo experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, grid):
        kind = _int_list if grid else int
        sp.add_argument("--m", type=kind, default=None, help="dimension" + (" (comma list)" if grid else ""))
        sp.add_argument("--K", type=kind, default=None, help="samples per batch" + (" (comma list)" if grid else ""))
        sp.add_argument("--nu", type=float, default=2.0, help="Student degrees of freedom")
        sp.add_argument("--rho", type=float, default=0.0, help="Toeplitz scatter coefficient")
        sp.add_argument("--q", type=float, default=0.95, help="Huber quantile parameter")
        sp.add_argument("--contamination", type=float, default=0.05, help="outlier fraction (mixture)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="output path (stdout if omitted)")

    for name in FIGURES:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        common(sp, grid=True)
        sp.add_argument("--runs", type=int, default=None, help="Monte Carlo trials per grid point")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--coeff-draws", type=int, default=10**6, help="draws for Monte Carlo coefficients")
        if name == "fig3":
            sp.add_argument("--panel", choices=("tyler", "huber", "both"), default="both")
        if name == "fig4":
            sp.add_argument("--test-point", choices=("core", "observed"), default="core")
            sp.add_argument("--bins", type=int, default=60)

    sp = sub.add_parser("coeffs", help="print asymptotic coefficients")
    common(sp, grid=False)
    sp.add_argument("--estimator", choices=("tyler", "student", "huber", "scm"), required=True)
    sp.add_argument("--model", choices=("auto", "gaussian", "student", "mixture"), default="auto",
                    help="data model (auto: Student for tyler/student, mixture for huber, Gaussian for scm)")
    sp.add_argument("--monte-carlo", action="store_true", help="force Monte Carlo moments")
    sp.add_argument("--n-draws", type=int, default=10**6)
    sp.add_argument("--format", choices=("text", "csv", "json"), default="text")

    sp = sub.add_parser("estimate", help="estimate a scatter matrix from a sample file")
    sp.add_argument("--input", required=True, help="binary sample file or .csv with re,im pairs")
    sp.add_argument("--estimator", choices=("tyler", "student", "huber", "scm"), default="tyler")
    sp.add_argument("--nu", type=float, default=2.0)
    sp.add_argument("--q", type=float, default=0.95)
    sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sp.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    sp.add_argument("--out", default=None)
    sp.add_argument("--format", choices=("text", "json"), default="json")

    sp = sub.add_parser("sample", help="draw CES samples into a file")
    common(sp, grid=False)
    sp.add_argument("--model", choices=("gaussian", "student", "mixture"), default="student")
    sp.add_argument("--format", choices=("bin", "csv"), default=None)
    return p


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_figure(args):
    kw = dict(experiment=args.command, m=args.m or (), K=args.K or (), nu=args.nu, rho=args.rho,
              q=args.q, contamination=args.contamination, runs=args.runs, seed=args.seed,
              output_path=args.out, output_format=args.format, coeff_draws=args.coeff_draws)
    for attr, key in (("panel", "panel"), ("test_point", "test_point"), ("bins", "bins")):
        if hasattr(args, attr):
            kw[key] = getattr(args, attr)
    cfg = ExperimentConfig(**kw)
    result = run_experiment(cfg)
    if args.out:
        rio.write_result(result, args.out, args.format)
    else:
        sys.stdout.write(rio.render_result(result, args.format))
    return 0


def _cmd_coeffs(args):
    m = args.m if args.m is not None else 10
    if m < 1:
        raise ConfigError("m must be >= 1")
    model_name = args.model
    if model_name == "auto":
        model_name = {"tyler": "student", "student": "student", "huber": "mixture", "scm": "gaussian"}[args.estimator]
    model = _model_from(model_name, args.nu, args.contamination)
    w = weight_library(args.estimator, m, q=args.q, nu=args.nu)
    if args.monte_carlo:
        c = coeffs_monte_carlo(w, model, m, n_draws=args.n_draws, rng=RngStream(args.seed, 0))
    else:
        try:
            c = coeffs_closed_form(w, model, m)
        except UnsupportedError:
            c = coeffs_monte_carlo(w, model, m, n_draws=args.n_draws, rng=RngStream(args.seed, 0))
    values = c.as_dict()
    info = {"estimator": w.label(), "model": model.describe(), "m": m, "source": c.source,
            "n_draws": c.n_draws, "seed": args.seed if c.source == "monte_carlo" else None}
    stderr = c.stderr or {}
    if args.format == "json":
        text = json.dumps({**info, "values": values, "stderr": {k: float(v) for k, v in stderr.items()}},
                          indent=1, sort_keys=True) + "\n"
    elif args.format == "csv":
        lines = ["name,value,stderr"]
        lines += [f"{k},{v!r},{float(stderr.get(k, 0.0))!r}" for k, v in values.items()]
        text = "\n".join(lines) + "\n"
    else:
        lines = [f"# {k}: {v}" for k, v in info.items() if v is not None]
        for k, v in values.items():
            se = f"  (se {float(stderr[k]):.2g})" if k in stderr else ""
            lines.append(f"{k:>8} = {v:.10g}{se}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def _cmd_estimate(args):
    Z = rio.read_samples(args.input)
    K, m = Z.shape
    w = weight_library(args.estimator, m, q=args.q, nu=args.nu)
    rep = m_estimate(Z, w, tol=args.tol, max_iter=args.max_iter)
    if args.format == "json":
        rec = {"estimator": w.label(), "m": m, "K": K, "iterations": rep.iterations,
               "residual": rep.residual, "converged": rep.converged,
               "estimate": {"re": rep.estimate.real.tolist(), "im": rep.estimate.imag.tolist()}}
        text = json.dumps(rec) + "\n"
    else:
        head = (f"# {w.label()} m={m} K={K} iterations={rep.iterations} "
                f"residual={rep.residual:.3g} converged={rep.converged}\n")
        body = "\n".join(" ".join(f"{v.real:+.6e}{v.imag:+.6e}j" for v in row) for row in rep.estimate)
        text = head + body + "\n"
    _emit(text, args.out)
    if not rep.converged:
        return _error(RuntimeError(f"no convergence within {args.max_iter} iterations"), 1, "NotConverged")
    return 0


def _cmd_sample(args):
    m = args.m if args.m is not None else 5
    K = args.K if args.K is not None else 100
    if m < 1 or K < 1:
        raise ConfigError("m and K must be >= 1")
    if not args.out:
        raise ConfigError("sample needs --out")
    model = _model_from(args.model, args.nu, args.contamination)
    M = toeplitz_scatter(args.rho, m)
    batch = sample_coupled_batch(model, M, K, RngStream(args.seed, 0))
    rio.write_samples(args.out, batch.z, args.format)
    return 0


_COMMANDS = {"coeffs": _cmd_coeffs, "estimate": _cmd_estimate, "sample": _cmd_sample}


def _error(exc, code, kind=None):
    rec = {"error": kind or type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(rec) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _error(exc, 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command in FIGURES:
            return _cmd_figure(args)
        return _COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        return _error(exc, 2)
    except (ScatterError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
