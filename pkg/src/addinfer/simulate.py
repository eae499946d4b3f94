"""Simulation model, null-distribution (Wilks) experiments and power curves."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .backfit import ModelSpec, SmootherBank
from .bandwidth import select_bandwidths_cv, testing_bandwidths
from .bootstrap import BootstrapPlan, bootstrap_problem, default_workers, replicate_rng
from .data import Dataset
from .exceptions import AddinferError
from .inference import STATISTICS, LossSpec, TestProblem

__all__ = [
    "ERRORS",
    "SimConfig",
    "PowerGrid",
    "WilksResult",
    "PowerResult",
    "gen_sim_data",
    "sim_covariates",
    "sim_errors",
    "m1_beta",
    "pilot_bandwidths",
    "wilks_experiment",
    "null_scaled_statistics",
    "power_curve",
    "rule_of_thumb_density",
]

ERRORS = ("normal", "t5", "chisq5", "chisq10")
WILKS_STATISTICS = ("glr_scaled", "lf_scaled", "f_lambda", "f_q")
_CORR = 0.6


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    theta: float = 0.0
    beta: float = 0.0
    error: str = "normal"
    seed: int = 0
    key: tuple = ()  # stream key below the master seed

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.error not in ERRORS:
            raise ValueError(f"error must be one of {ERRORS}")
        if self.n < 10:
            raise ValueError("n must be at least 10")


def sim_covariates(rng, n, d=4):
    """``X = 2 atan(Z)/π`` with ``Z`` equicorrelated normal (correlation 0.6)."""
    cov = (1 - _CORR) * np.eye(d) + _CORR
    Z = rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T
    return 2.0 * np.arctan(Z) / np.pi


def sim_errors(rng, n, kind="normal"):
    """Errors with mean 0 and variance 1."""
    if kind == "normal":
        return rng.standard_normal(n)
    if kind == "t5":
        return rng.standard_t(5, n) / math.sqrt(5.0 / 3.0)
    if kind in ("chisq5", "chisq10"):
        k = 5 if kind == "chisq5" else 10
        return (rng.chisquare(k, n) - k) / math.sqrt(2.0 * k)
    raise ValueError(f"unknown error distribution {kind!r}")


def m1_beta(x1, beta):
    """``(1 + β sd(m1)) m1`` with ``m1 = 0.5 - x² + 3x³``; sd from the realised sample."""
    m1 = 0.5 - x1**2 + 3 * x1**3
    if beta == 0:
        return m1
    return (1.0 + beta * math.sqrt(m1.var())) * m1


def _mean_parts(X, theta, beta):
    base = m1_beta(X[:, 0], beta) + X[:, 2] * (1 - X[:, 2]) + np.exp(2 * X[:, 3] - 1)
    return base + theta * np.sin(np.pi * X[:, 1])


def gen_sim_data(cfg: SimConfig) -> Dataset:
    rng = replicate_rng(cfg.seed, *cfg.key)
    X = sim_covariates(rng, cfg.n)
    eps = sim_errors(rng, cfg.n, cfg.error)
    y = _mean_parts(X, cfg.theta, cfg.beta) + eps
    return Dataset(y=y, X=X, names=("x1", "x2", "x3", "x4"))


def rule_of_thumb_density(samples, grid):
    """Gaussian KDE with bandwidth ``1.06 s n^{-1/5}`` evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=float)
    samples = samples[np.isfinite(samples)]
    kde = stats.gaussian_kde(samples, bw_method=1.06 * samples.size ** -0.2)
    return kde(grid)


def pilot_bandwidths(n, *, seed=0, draws=5, theta=1.0, search=None):
    """Median CV-selected bandwidths (scaled units) over pilot draws of the full model."""
    hs = []
    for r in range(draws):
        data = gen_sim_data(SimConfig(n=n, theta=theta, seed=seed, key=(10**6 + r,)))
        kw = {} if search is None else {"search": search}
        hs.append(select_bandwidths_cv(data, ModelSpec(p=1), **kw).h)
    return tuple(np.median(np.asarray(hs), axis=0).tolist())


def _map_ordered(fn, items, workers):
    workers = workers or default_workers()
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _scaled_from(problem: TestProblem, Y):
    st = problem.statistics(Y, validate=False)
    glr_s, lf_s = problem.scaled(st)
    return {"glr_scaled": glr_s, "lf_scaled": lf_s, "f_lambda": st["f_lambda"], "f_q": st["f_q"],
            "df_glr": np.full(Y.shape[1], problem.constants.r_k * problem.constants.mu_n),
            "df_lf": np.full(Y.shape[1], problem.constants.s_k * problem.constants.nu_n)}


@dataclass
class WilksResult:
    labels: tuple
    samples: dict  # label -> statistic -> (n_sim,)
    grid: dict  # statistic -> abscissa
    curves: dict  # label -> statistic -> density on grid
    config: dict
    timings: dict = field(default_factory=dict)

    def means(self, stat):
        return {lab: float(np.nanmean(self.samples[lab][stat])) for lab in self.labels}

    def write(self, outdir, prefix="wilks"):
        """Tidy replicate CSV, one density CSV per statistic and a JSON manifest."""
        import os

        os.makedirs(outdir, exist_ok=True)
        files = []
        path = os.path.join(outdir, f"{prefix}_replicates.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "variation", "statistic", "value"])
            for lab in self.labels:
                for st in (*WILKS_STATISTICS, "df_glr", "df_lf"):
                    for r, v in enumerate(self.samples[lab][st]):
                        w.writerow([r, lab, st, repr(float(v))])
        files.append(path)
        for st in WILKS_STATISTICS:
            path = os.path.join(outdir, f"{prefix}_density_{st}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["x", *self.labels])
                for i, x in enumerate(self.grid[st]):
                    w.writerow([repr(float(x)), *(repr(float(self.curves[lab][st][i])) for lab in self.labels)])
            files.append(path)
        path = os.path.join(outdir, f"{prefix}_manifest.json")
        manifest = _manifest(self.config, self.timings, files)
        manifest["means"] = {st: self.means(st) for st in WILKS_STATISTICS}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        files.append(path)
        return files


def _manifest(config, timings, files):
    import scipy

    from . import __version__

    return {"config": config, "timings": timings, "outputs": [str(f) for f in files],
            "versions": {"addinfer": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()}}


def wilks_experiment(n_sim=1000, n=100, h_opt=None, *, seed=0, h1_factors=(1 / 3, 1.0, 1.5),
                     betas=(-1.5, 0.0, 1.5), tested=1, error="normal", loss=LossSpec(0.0, 1.0),
                     grid_points=256, workers=None) -> WilksResult:
    """Null distributions of the scaled statistics across nuisance settings.

    Every replicate draws covariates and errors once; the nuisance-bandwidth
    variations (``h_1 = factor × h_opt``, ``β = 0``) and the nuisance-function
    variations (``β`` levels at ``h_opt``) share them.
    """
    t0 = time.perf_counter()
    if h_opt is None:
        h_opt = pilot_bandwidths(n, seed=seed)
    h_opt = tuple(float(v) for v in h_opt)
    spec = ModelSpec(p=1, h=h_opt)
    labels = tuple([f"h1x{f:.4g}" for f in h1_factors] + [f"beta{b:+g}" for b in betas])

    def one(r):
        rng = replicate_rng(seed, r)
        X = sim_covariates(rng, n)
        eps = sim_errors(rng, n, error)
        Y = np.column_stack([_mean_parts(X, 0.0, b) + eps for b in betas])
        data = Dataset(y=Y[:, 0], X=X)
        bank = SmootherBank(data.scaled, spec)
        base = TestProblem(data, spec, tested, loss=loss, bank=bank)
        out = {}
        res = _scaled_from(base, Y)
        for k, b in enumerate(betas):
            out[f"beta{b:+g}"] = {s: v[k] for s, v in res.items()}
        y0 = _mean_parts(X, 0.0, 0.0) + eps
        for f in h1_factors:
            if f == 1.0:
                prob = base
            else:
                b2 = bank.with_bandwidth(0, f * h_opt[0])
                prob = TestProblem(data, b2.spec, tested, loss=loss, bank=b2)
            res = _scaled_from(prob, y0[:, None])
            out[f"h1x{f:.4g}"] = {s: v[0] for s, v in res.items()}
        return out

    reps = _map_ordered(one, range(n_sim), workers)
    keys = (*WILKS_STATISTICS, "df_glr", "df_lf")
    samples = {lab: {s: np.array([rep[lab][s] for rep in reps]) for s in keys} for lab in labels}
    grid, curves = {}, {lab: {} for lab in labels}
    for s in WILKS_STATISTICS:
        allv = np.concatenate([samples[lab][s] for lab in labels])
        hi = float(np.nanquantile(allv, 0.999)) * 1.25
        grid[s] = np.linspace(0.0, hi, grid_points)
        for lab in labels:
            curves[lab][s] = rule_of_thumb_density(samples[lab][s], grid[s])
    config = {"n_sim": n_sim, "n": n, "h_opt": list(h_opt), "seed": seed, "h1_factors": list(h1_factors),
              "betas": list(betas), "tested": tested, "error": error, "loss": asdict(loss)}
    return WilksResult(labels=labels, samples=samples, grid=grid, curves=curves, config=config,
                       timings={"total": time.perf_counter() - t0})


def null_scaled_statistics(n_sim=500, n=200, h=None, *, seed=0, error="normal", tested=1,
                           loss=LossSpec(0.0, 1.0), workers=None):
    """Scaled statistics under the null with covariates redrawn per replicate.

    Returns arrays ``glr_scaled``, ``lf_scaled`` and the per-replicate
    chi-squared means ``df_glr = r_k μ_n`` and ``df_lf = s_k ν_n``.
    """
    if h is None:
        h = pilot_bandwidths(n, seed=seed)
    spec = ModelSpec(p=1, h=tuple(h))

    def one(r):
        data = gen_sim_data(SimConfig(n=n, theta=0.0, error=error, seed=seed, key=(r,)))
        prob = TestProblem(data, spec, tested, loss=loss)
        res = _scaled_from(prob, data.y[:, None])
        return {k: float(v[0]) for k, v in res.items()}

    reps = _map_ordered(one, range(n_sim), workers)
    return {k: np.array([rep[k] for rep in reps]) for k in reps[0]}


@dataclass(frozen=True)
class PowerGrid:
    thetas: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    alphas: tuple = (0.05, 0.01)
    n_sim: int = 500
    B: int = 2000
    bandwidth: object = "testing-rate"  # or "cv-optimal", or a tuple in scaled units
    n: int = 100
    error: str = "normal"
    loss: LossSpec = field(default_factory=lambda: LossSpec(1.0, 1.0))
    statistics: tuple = STATISTICS
    tested: int = 1

    def __post_init__(self):
        if not self.thetas or not self.alphas:
            raise ValueError("theta and alpha grids must be nonempty")
        if self.n_sim < 1 or self.B < 1:
            raise ValueError("n_sim and B must be positive")
        if isinstance(self.bandwidth, str) and self.bandwidth not in ("testing-rate", "cv-optimal"):
            raise ValueError("bandwidth must be 'testing-rate', 'cv-optimal' or a tuple")


@dataclass
class PowerResult:
    grid: PowerGrid
    pvalues: dict  # theta -> statistic -> (n_sim,), NaN for failed replicates
    config: dict
    timings: dict = field(default_factory=dict)

    def rejection(self, theta, stat, alpha):
        p = self.pvalues[theta][stat]
        ok = np.isfinite(p)
        return float(np.mean(p[ok] < alpha)) if ok.any() else float("nan")

    def failures(self, theta):
        return int(np.sum(~np.isfinite(self.pvalues[theta][self.grid.statistics[0]])))

    def table(self):
        rows = []
        for th in self.grid.thetas:
            for a in self.grid.alphas:
                for s in self.grid.statistics:
                    rows.append({"theta": th, "alpha": a, "statistic": s,
                                 "rejection": self.rejection(th, s, a), "n_sim": self.grid.n_sim,
                                 "failures": self.failures(th)})
        return rows

    def write(self, outdir, prefix="power"):
        import os

        os.makedirs(outdir, exist_ok=True)
        files = []
        path = os.path.join(outdir, f"{prefix}_table.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["theta", "alpha", "statistic", "rejection", "n_sim", "failures"])
            w.writeheader()
            w.writerows(self.table())
        files.append(path)
        path = os.path.join(outdir, f"{prefix}_pvalues.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "replicate", "statistic", "p_value"])
            for th in self.grid.thetas:
                for s in self.grid.statistics:
                    for r, p in enumerate(self.pvalues[th][s]):
                        w.writerow([th, r, s, repr(float(p))])
        files.append(path)
        path = os.path.join(outdir, f"{prefix}_manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_manifest(self.config, self.timings, files), fh, indent=2, sort_keys=True)
        files.append(path)
        return files


def power_curve(grid: PowerGrid, *, seed=0, workers=None) -> PowerResult:
    """Bootstrap rejection rates over the alternative sequence.

    Replicate ``r`` draws covariates and errors from stream ``(seed, r)`` and
    reuses them for every ``θ``; its bootstrap uses stream ``(seed, r, 1, b)``.
    Hat matrices depend only on the covariates, so with a fixed bandwidth rule
    they are built once per replicate.
    """
    t0 = time.perf_counter()
    stats_ = grid.statistics
    B = grid.B

    def spec_for(data):
        if isinstance(grid.bandwidth, str):
            if grid.bandwidth == "testing-rate":
                return ModelSpec(p=1, h=testing_bandwidths(data, 1))
            return ModelSpec(p=1, h=select_bandwidths_cv(data, ModelSpec(p=1)).h)
        return ModelSpec(p=1, h=tuple(grid.bandwidth))

    def one(r):
        rng = replicate_rng(seed, r)
        X = sim_covariates(rng, grid.n)
        eps = sim_errors(rng, grid.n, grid.error)
        out = {}
        problem = None
        for th in grid.thetas:
            data = Dataset(y=_mean_parts(X, th, 0.0) + eps, X=X)
            try:
                if problem is None or grid.bandwidth == "cv-optimal":
                    problem = TestProblem(data, spec_for(data), grid.tested, loss=grid.loss)
                plan = BootstrapPlan(B=B, seed=seed, loss=grid.loss, workers=1, statistics=stats_,
                                     key=(r, 1))
                res = bootstrap_problem(problem, plan, y=data.y)
                out[th] = {s: res.p_values[s] for s in stats_}
            except AddinferError:
                out[th] = {s: float("nan") for s in stats_}
        return out

    reps = _map_ordered(one, range(grid.n_sim), workers)
    pvalues = {th: {s: np.array([rep[th][s] for rep in reps]) for s in stats_} for th in grid.thetas}
    cfg = {k: (asdict(v) if isinstance(v, LossSpec) else (list(v) if isinstance(v, tuple) else v))
           for k, v in asdict(grid).items()}
    cfg["seed"] = seed
    return PowerResult(grid=grid, pvalues=pvalues, config=cfg, timings={"total": time.perf_counter() - t0})
