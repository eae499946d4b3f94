"""Command-line interface: ``addinfer <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .backfit import ModelSpec, SmootherBank, fit_backfitting, fit_explicit, grid_estimates
from .backfit import evaluate_components
from .bandwidth import BandwidthSearch, select_bandwidths_cv, testing_bandwidths
from .bootstrap import default_workers, run_test
from .data import Dataset, read_csv
from .estimator import parse_null
from .exceptions import AddinferError, NumericalError
from .inference import LossSpec, TestProblem, are_lf_glr, write_null_overlay
from .kernel import KernelSpec
from .simulate import ERRORS, PowerGrid, SimConfig, gen_sim_data, pilot_bandwidths, power_curve
from .simulate import wilks_experiment
from .smoother import build_smoother, modified_smoother_eigs

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False,
                      default=_json_default)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _manifest(args, started, **extra):
    import scipy

    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": args.command, "config": cfg, "wall_time_s": time.perf_counter() - started,
            "versions": {"addinfer": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()}, **extra}


def _workers(args):
    return args.workers or default_workers()


# -- data preparation ---------------------------------------------------------------


def _load(args):
    covs = _names(args.covariates) if args.covariates else None
    data = read_csv(args.input, args.response, covs)
    logs = set(_names(args.log)) if getattr(args, "log", None) else set()
    unknown = logs - set(data.names)
    if unknown:
        raise UsageError(f"--log names unknown covariates: {sorted(unknown)}")
    if logs:
        X = data.X.copy()
        names = list(data.names)
        for j, name in enumerate(data.names):
            if name in logs:
                if np.any(X[:, j] <= 0):
                    raise ValueError(f"cannot take log of nonpositive values in column {name!r}")
                X[:, j] = np.log(X[:, j])
                names[j] = f"log_{name}"
        data = Dataset(y=data.y, X=X, names=tuple(names), response_name=data.response_name)
    info = {"n_read": data.n}
    if getattr(args, "subsample", None):
        if args.subsample > data.n:
            raise UsageError(f"--subsample {args.subsample} exceeds the {data.n} rows")
        rng = np.random.default_rng(args.seed)
        rows = np.sort(rng.choice(data.n, size=args.subsample, replace=False))
        data = data.subset(rows)
        info["subsample_rows"] = (rows + 2).tolist()  # CSV row numbers
    return data, info


def _orders(args, d):
    p = _ints(str(args.p))
    if len(p) not in (1, d):
        raise UsageError(f"--p needs 1 or {d} values")
    return tuple(np.broadcast_to(p, (d,)).tolist())


def _bandwidths(args, data, p, info):
    text = str(args.bandwidths)
    if text == "auto":
        sel = select_bandwidths_cv(data, ModelSpec(p=p, kernel=KernelSpec(args.kernel), grid_size=args.grid_size,
                                                   quadrature=args.quadrature), BandwidthSearch())
        info["bandwidth_selection"] = {k: v for k, v in sel.to_dict().items() if k != "aicc_traces"}
        return tuple(sel.h)
    if text == "testing":
        return testing_bandwidths(data, p)
    h = _floats(text)
    if len(h) not in (1, data.d):
        raise UsageError(f"--bandwidths needs 1 or {data.d} values, 'auto' or 'testing'")
    h = tuple(np.broadcast_to(h, (data.d,)).tolist())
    if args.raw_bandwidths:
        h = tuple(float(v) for v in np.asarray(h) / data.span)
    return h


def _spec(args, data, info):
    p = _orders(args, data.d)
    h = _bandwidths(args, data, p, info)
    return ModelSpec(p=p, h=h, kernel=KernelSpec(args.kernel), grid_size=args.grid_size,
                     quadrature=args.quadrature, max_iter=args.max_iter, tol=args.tol)


def _drop_outliers(args, data, spec, info):
    if not args.drop_outliers:
        return data
    lo, hi = _floats(args.drop_outliers.replace(":", ","))
    fit = fit_explicit(data, spec)
    keep = (fit.residuals >= lo) & (fit.residuals <= hi)
    info["dropped_rows"] = (np.flatnonzero(~keep) + 2).tolist()
    return data.subset(np.flatnonzero(keep))


# -- commands -----------------------------------------------------------------------


def cmd_fit(args):
    t0 = time.perf_counter()
    data, info = _load(args)
    spec = _spec(args, data, info)
    data = _drop_outliers(args, data, spec, info)
    fit = fit_explicit(data, spec) if args.method == "explicit" else fit_backfitting(data, spec)
    out = fit.to_dict()
    out["names"] = list(data.names)
    out["response"] = data.response_name
    out["h_raw"] = (np.asarray(spec.h) * data.span).tolist()
    if args.grid_estimates:
        out["grid_estimates"] = grid_estimates(fit, data).to_dict()
    if args.curves:
        _write_curves(args.curves, fit, data, args.grid_points)
    if args.dump_smoother:
        bank = SmootherBank(data.scaled, spec, check_spectrum=False)
        np.savez(args.dump_smoother, **{f"H_{name}": bank.H(j) for j, name in enumerate(data.names)})
    out["manifest"] = _manifest(args, t0, **info)
    _write_json(args.output, _clean(out))
    return 0


def _write_curves(path, fit, data, points):
    """Tidy CSV of ``m̂_j``, ``m̂*_j`` and ``ĝ_j`` on an even grid over each covariate."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["covariate", "x", "m", "m_star", "g"])
        for j, name in enumerate(data.names):
            X_new = np.tile(data.lo, (points, 1))
            xs = np.linspace(data.lo[j], data.lo[j] + data.span[j], points)
            X_new[:, j] = xs
            m, ms, g = evaluate_components(fit, data, X_new)
            for i in range(points):
                w.writerow([name, repr(float(xs[i])), repr(float(m[i, j])), repr(float(ms[i, j])),
                            repr(float(g[i, j]))])


def cmd_test(args):
    t0 = time.perf_counter()
    data, info = _load(args)
    spec = _spec(args, data, info)
    data = _drop_outliers(args, data, spec, info)
    tested = [data.names.index(t) if t in data.names else _resolve_name(t, data) for t in _names(args.tested)]
    null_degree = parse_null(args.null)
    loss = LossSpec(args.loss_s, args.loss_t)
    problem = TestProblem(data, spec, tested, null_degree=null_degree, loss=loss)

    def progress(done, total):
        if args.progress:
            print(f"bootstrap {done}/{total}", file=sys.stderr, flush=True)

    report = run_test(data, spec, tested, null_degree=null_degree, loss=loss, B=args.B, seed=args.seed,
                      workers=_workers(args), problem=problem, progress=progress)
    out = report.to_dict()
    out["alpha"] = args.alpha
    pv = report.p_boot or report.p_asym
    out["reject"] = {k: (None if v is None else bool(v < args.alpha)) for k, v in pv.items()}
    out["h_scaled"] = list(spec.h)
    out["h_raw"] = (np.asarray(spec.h) * data.span).tolist()
    out["names"] = list(data.names)
    out["tested_names"] = [data.names[t] for t in tested]
    res = report.bootstrap_result
    if args.null_samples and res is not None:
        res.to_csv(args.null_samples)
    if args.overlay and res is not None and not report.degenerate:
        write_null_overlay(args.overlay, problem, res)
    out["manifest"] = _manifest(args, t0, **info)
    _write_json(args.output, _clean(out))
    return 0


def _resolve_name(name, data):
    alias = f"log_{name}"
    if alias in data.names:
        return data.names.index(alias)
    raise UsageError(f"tested covariate {name!r} is not among {list(data.names)}")


def cmd_bandwidth(args):
    t0 = time.perf_counter()
    data, info = _load(args)
    p = _orders(args, data.d)
    search = BandwidthSearch(grid=tuple(np.geomspace(args.grid_min, args.grid_max, args.grid_n).tolist()),
                             max_cycles=args.max_cycles, cycle_tol=args.cycle_tol, initial=args.initial)
    sel = select_bandwidths_cv(data, ModelSpec(p=p, kernel=KernelSpec(args.kernel), grid_size=args.grid_size,
                                               quadrature=args.quadrature), search)
    out = sel.to_dict()
    out["names"] = list(data.names)
    out["manifest"] = _manifest(args, t0, **info)
    _write_json(args.output, _clean(out))
    return 0


def cmd_eigen(args):
    data, _ = _load(args)
    if args.covariate not in data.names:
        raise UsageError(f"covariate {args.covariate!r} not found")
    j = data.names.index(args.covariate)
    x = data.scaled[:, j]
    from .design import projection
    from .smoother import SmootherConfig

    G_j = projection(x[:, None] ** np.arange(int(args.p) + 1))
    rows = []
    for h in _floats(args.bandwidths):
        sm = build_smoother(x, SmootherConfig(p=int(args.p), h=h, kernel=KernelSpec(args.kernel),
                                              grid_size=args.grid_size, quadrature=args.quadrature))
        ev = sm.eigenvalues()
        mod = modified_smoother_eigs(sm, G_j)
        rows.extend((h, i, ev[i], mod[i]) for i in range(len(ev)))
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output not in (None, "-") else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["bandwidth", "index", "eig_smoother", "eig_modified"])
        for h, i, a, b in rows:
            w.writerow([repr(h), i, repr(float(a)), repr(float(b))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_simulate_data(args):
    cfg = SimConfig(n=args.n, theta=args.theta, beta=args.beta, error=args.error, seed=args.seed)
    data = gen_sim_data(cfg)
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output not in (None, "-") else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["y", *data.names])
        for i in range(data.n):
            w.writerow([repr(float(data.y[i])), *(repr(float(v)) for v in data.X[i])])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _h_opt(args):
    if args.h_opt == "auto":
        return pilot_bandwidths(args.n, seed=args.seed)
    h = _floats(args.h_opt)
    return tuple(np.broadcast_to(h, (4,)).tolist())


def cmd_simulate_wilks(args):
    t0 = time.perf_counter()
    res = wilks_experiment(args.n_sim, args.n, _h_opt(args), seed=args.seed, error=args.error,
                           loss=LossSpec(args.loss_s, args.loss_t), workers=_workers(args))
    res.timings["wall"] = time.perf_counter() - t0
    files = res.write(args.outdir)
    print("\n".join(files))
    return 0


def cmd_simulate_power(args):
    rule = args.bandwidth_rule
    if rule not in ("testing-rate", "cv-optimal"):
        rule = tuple(_floats(rule))
    grid = PowerGrid(thetas=tuple(_floats(args.thetas)), alphas=tuple(_floats(args.alphas)),
                     n_sim=args.n_sim, B=args.B, bandwidth=rule, n=args.n, error=args.error,
                     loss=LossSpec(args.loss_s, args.loss_t))
    res = power_curve(grid, seed=args.seed, workers=_workers(args))
    files = res.write(args.outdir)
    print("\n".join(files))
    return 0


def cmd_are(args):
    t0 = time.perf_counter()
    value = are_lf_glr(KernelSpec(args.kernel), args.omega)
    _write_json(args.output, {"kernel": args.kernel, "omega": args.omega, "are": value,
                              "manifest": _manifest(args, t0)})
    return 0


# -- parser -------------------------------------------------------------------------


def _data_args(p, covariates=True):
    p.add_argument("--input", "-i", required=True, help="CSV file with a header row")
    p.add_argument("--response", "-r", required=True, help="response column")
    if covariates:
        p.add_argument("--covariates", "-c", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--log", help="comma-separated covariates to log-transform before fitting")
    p.add_argument("--kernel", default="gaussian", choices=("gaussian", "epanechnikov", "uniform"))
    p.add_argument("--grid-size", type=int, default=401, help="quadrature nodes for the smoother")
    p.add_argument("--quadrature", choices=("gauss-legendre", "midpoint"), default="gauss-legendre",
                   help="rule for the integral over evaluation points")


def _model_args(p):
    p.add_argument("--p", default="1", help="local polynomial order(s), one or per covariate")
    p.add_argument("--bandwidths", "-b", default="auto",
                   help="bandwidth(s) on the [0,1]-scaled covariates, 'auto' (AICc) or 'testing'")
    p.add_argument("--raw-bandwidths", action="store_true", help="interpret --bandwidths in raw units")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--drop-outliers", metavar="LO:HI",
                   help="refit after removing rows whose full-model residual is < LO or > HI")
    p.add_argument("--subsample", type=int, help="random subsample of this many rows (uses --seed)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="addinfer", description="Additive-model fitting and component tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--json-errors", action="store_true", help="emit errors as JSON on stderr")
    parser.add_argument("--workers", type=int, help="worker threads (default: ADDINFER_THREADS or CPUs)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit an additive model")
    _data_args(p)
    _model_args(p)
    p.add_argument("--method", choices=("explicit", "backfitting"), default="explicit")
    p.add_argument("--output", "-o", default="-", help="fit JSON (default stdout)")
    p.add_argument("--curves", help="CSV of m, m_star and g curves on an even grid")
    p.add_argument("--grid-points", type=int, default=101)
    p.add_argument("--grid-estimates", action="store_true", help="include local coefficient curves")
    p.add_argument("--dump-smoother", metavar="NPZ", help="save the smoother matrices")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="test whether covariates contribute")
    _data_args(p)
    _model_args(p)
    p.add_argument("--tested", "-t", required=True, help="covariate(s) removed under the null")
    p.add_argument("--null", default="omit", help="omit, linear or polynomial:k")
    p.add_argument("--B", type=int, default=200, help="bootstrap replicates (0: asymptotic only)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--loss-s", type=float, default=0.0, help="LINEX shape")
    p.add_argument("--loss-t", type=float, default=1.0, help="LINEX scale")
    p.add_argument("--output", "-o", default="-")
    p.add_argument("--null-samples", help="CSV of bootstrap null samples")
    p.add_argument("--overlay", help="CSV of bootstrap vs asymptotic null densities")
    p.add_argument("--progress", action="store_true", help="bootstrap progress lines on stderr")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bandwidth", help="AICc bandwidth selection")
    _data_args(p)
    p.add_argument("--p", default="1")
    p.add_argument("--grid-min", type=float, default=0.02)
    p.add_argument("--grid-max", type=float, default=1.0)
    p.add_argument("--grid-n", type=int, default=30)
    p.add_argument("--max-cycles", type=int, default=10)
    p.add_argument("--cycle-tol", type=float, default=1e-3)
    p.add_argument("--initial", type=float, default=0.3)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("eigen", help="eigenvalues of a smoother and its modified form")
    _data_args(p)
    p.add_argument("--covariate", required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--bandwidths", "-b", default="0.05,0.1,0.2,0.4")
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("simulate-data", help="write one dataset from the simulation model")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--error", choices=ERRORS, default="normal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("simulate-wilks", help="null distributions across nuisance settings")
    p.add_argument("--n-sim", type=int, default=1000)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--h-opt", default="auto", help="scaled bandwidths or 'auto' (pilot AICc)")
    p.add_argument("--error", choices=ERRORS, default="normal")
    p.add_argument("--loss-s", type=float, default=0.0)
    p.add_argument("--loss-t", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_simulate_wilks)

    p = sub.add_parser("simulate-power", help="bootstrap power over the alternative sequence")
    p.add_argument("--n-sim", type=int, default=500)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--B", type=int, default=2000)
    p.add_argument("--thetas", default="0,0.2,0.4,0.6,0.8,1")
    p.add_argument("--alphas", default="0.05,0.01")
    p.add_argument("--bandwidth-rule", default="testing-rate",
                   help="testing-rate, cv-optimal, or comma-separated scaled bandwidths")
    p.add_argument("--error", choices=ERRORS, default="normal")
    p.add_argument("--loss-s", type=float, default=1.0)
    p.add_argument("--loss-t", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=".")
    p.set_defaults(func=cmd_simulate_power)

    p = sub.add_parser("are", help="asymptotic relative efficiency of the LF over the GLR test")
    p.add_argument("--kernel", default="gaussian", choices=("gaussian", "epanechnikov", "uniform"))
    p.add_argument("--omega", type=float, default=0.1)
    p.add_argument("--output", "-o", default="-")
    p.set_defaults(func=cmd_are)
    return parser


def _fail(args_json, kind, exc, code):
    if args_json:
        sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc),
                                     "exit_code": code}, sort_keys=True) + "\n")
    else:
        sys.stderr.write(f"addinfer: error: {exc}\n")
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    json_errors = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be positive")
        if args.workers:
            os.environ["ADDINFER_THREADS"] = str(args.workers)
        return args.func(args)
    except UsageError as exc:
        return _fail(json_errors, "usage", exc, 1)
    except NumericalError as exc:
        return _fail(json_errors, "numerical", exc, 2)
    except (AddinferError, ValueError, OSError) as exc:
        return _fail(json_errors, "input", exc, 1)
    except np.linalg.LinAlgError as exc:
        return _fail(json_errors, "numerical", exc, 2)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
