"""Conditional bootstrap null distributions and p-values."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BootstrapFailureError
from .inference import STATISTICS, LossSpec, TestProblem, TestReport

__all__ = [
    "BootstrapPlan",
    "BootstrapResult",
    "conditional_bootstrap",
    "bootstrap_problem",
    "replicate_rng",
    "default_workers",
    "run_test",
]

CHUNK = 64
MAX_FAILURE_RATE = 0.05


def default_workers() -> int:
    """Worker count from ``ADDINFER_THREADS`` or the available CPUs."""
    env = os.environ.get("ADDINFER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"ADDINFER_THREADS must be an integer, got {env!r}") from None
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based stream for ``(seed, *key)``.

    Streams do not depend on the order in which replicates are run.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


@dataclass(frozen=True)
class BootstrapPlan:
    B: int = 200
    seed: int = 0
    statistics: tuple = STATISTICS
    loss: LossSpec = field(default_factory=LossSpec)
    workers: int | None = None
    key: tuple = ()  # prefix for per-replicate stream keys

    def __post_init__(self):
        if int(self.B) < 1:
            raise ValueError("B must be at least 1")
        unknown = set(self.statistics) - set(STATISTICS)
        if unknown:
            raise ValueError(f"unknown statistics {sorted(unknown)}")
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "statistics", tuple(self.statistics))


@dataclass
class BootstrapResult:
    null_samples: dict
    observed: dict
    p_values: dict
    seed: int
    B: int
    failures: int = 0

    def to_dict(self, include_samples=False):
        out = {
            "B": self.B,
            "seed": self.seed,
            "failures": self.failures,
            "observed": {k: float(v) for k, v in self.observed.items()},
            "p_values": {k: float(v) for k, v in self.p_values.items()},
        }
        if include_samples:
            out["null_samples"] = {k: [None if not np.isfinite(x) else float(x) for x in v]
                                   for k, v in self.null_samples.items()}
        return out

    def to_csv(self, path):
        """One row per replicate, one column per statistic."""
        names = list(self.null_samples)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", *names])
            for b in range(self.B):
                w.writerow([b, *(repr(float(self.null_samples[k][b])) for k in names)])


def _pvalue(null, observed):
    ok = np.isfinite(null)
    if not ok.any():
        return float("nan")
    return float(np.count_nonzero(null[ok] > observed) / np.count_nonzero(ok))


def bootstrap_problem(problem: TestProblem, plan: BootstrapPlan, *, y=None, progress=None) -> BootstrapResult:
    """Conditional bootstrap on a prepared :class:`TestProblem`.

    ``y* = W0 y + e*`` with ``e*`` resampled from the centred residuals of the
    full model.  Both hat matrices stay fixed, so each replicate is a pair of
    matrix-vector products.  Replicates are evaluated in fixed chunks, each
    with its own per-replicate streams, so results are identical for any
    worker count.
    """
    if problem.loss != plan.loss:
        raise ValueError("plan.loss differs from the loss the test problem was built with")
    y = problem.data.y if y is None else np.asarray(y, dtype=float)
    n = y.shape[0]
    observed_all = problem.statistics(y)
    observed = {k: observed_all.get(k) for k in plan.statistics}
    mean0 = problem.W0 @ y
    resid = y - problem.W @ y
    resid = resid - resid.mean()
    B = plan.B
    starts = list(range(0, B, CHUNK))

    def run_chunk(start):
        stop = min(start + CHUNK, B)
        Ystar = np.empty((n, stop - start))
        for c, b in enumerate(range(start, stop)):
            idx = replicate_rng(plan.seed, *plan.key, b).integers(0, n, size=n)
            Ystar[:, c] = mean0 + resid[idx]
        return problem.statistics(Ystar, validate=False)

    workers = plan.workers or default_workers()
    if workers == 1 or len(starts) == 1:
        chunks = []
        for s in starts:
            chunks.append(run_chunk(s))
            if progress:
                progress(min(s + CHUNK, B), B)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(run_chunk, starts))
        if progress:
            progress(B, B)
    null = {k: np.concatenate([c[k] for c in chunks]) for k in plan.statistics}
    bad = np.zeros(B, dtype=bool)
    for k in plan.statistics:
        bad |= ~np.isfinite(null[k])
    for k in ("rss0", "rss1"):
        bad |= ~(np.concatenate([c[k] for c in chunks]) > 0)
    failures = int(bad.sum())
    if failures > MAX_FAILURE_RATE * B:
        raise BootstrapFailureError(f"{failures} of {B} bootstrap replicates failed")
    for k in null:
        null[k] = np.where(bad, np.nan, null[k])
    if problem.degenerate:
        p = {k: 1.0 for k in plan.statistics}
    else:
        p = {k: _pvalue(null[k], observed[k]) for k in plan.statistics}
    return BootstrapResult(null_samples=null, observed=observed, p_values=p, seed=plan.seed, B=B,
                           failures=failures)


def conditional_bootstrap(data, spec, tested, plan: BootstrapPlan, *, null_degree=None,
                          progress=None) -> BootstrapResult:
    """Bootstrap p-values for removing ``tested`` from the additive model ``spec``."""
    problem = TestProblem(data, spec, tested, null_degree=null_degree, loss=plan.loss)
    return bootstrap_problem(problem, plan, progress=progress)


_REPORT_KEYS = {"glr": "lambda_n", "lf": "q_n", "f_lambda": "F_lambda", "f_q": "F_q", "sb": "S_n"}


def run_test(data, spec, tested, *, null_degree=None, loss=LossSpec(), B=200, seed=0,
             workers=None, problem=None, progress=None) -> TestReport:
    """Full test report: statistics, asymptotic p-values and (``B > 0``) bootstrap p-values."""
    problem = problem or TestProblem(data, spec, tested, null_degree=null_degree, loss=loss)
    report = problem.report()
    if B and B > 0:
        plan = BootstrapPlan(B=B, seed=seed, loss=loss, workers=workers)
        res = bootstrap_problem(problem, plan, progress=progress)
        report.p_boot = dict(res.p_values)
        report.bootstrap = {"B": res.B, "seed": res.seed, "failures": res.failures,
                            "statistics": [_REPORT_KEYS[k] for k in plan.statistics]}
        report.bootstrap_result = res
    return report
