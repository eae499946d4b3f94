"""Bandwidth selection: AICc coordinate search and the rate-optimal testing bandwidth."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .backfit import ModelSpec, SmootherBank, _parametric_maps, fit_backfitting, model_hat
from .data import Dataset
from .exceptions import BandwidthGridTooSmallError, BandwidthTooSmallError
from .smoother import SmootherConfig, build_smoother

__all__ = [
    "BandwidthSearch",
    "AiccResult",
    "BandwidthSelection",
    "WilksWindowWarning",
    "aicc",
    "aicc_univariate",
    "select_bandwidths_cv",
    "testing_bandwidth",
    "testing_bandwidths",
    "wilks_window",
    "check_wilks_window",
]


class WilksWindowWarning(UserWarning):
    """A bandwidth lies outside the range where the null law is free of nuisance terms."""


@dataclass(frozen=True)
class BandwidthSearch:
    grid: tuple = tuple(np.geomspace(0.02, 1.0, 30).tolist())
    max_cycles: int = 10
    cycle_tol: float = 1e-3
    initial: float = 0.3

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0:
            raise ValueError("bandwidth grid is empty")
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("bandwidth grid must be positive and strictly increasing")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        object.__setattr__(self, "grid", tuple(g.tolist()))


def aicc(rss, trace, n):
    """``log(RSS/n) + 1 + 2(tr+1)/(n-tr-2)``; ``inf`` when ``tr >= n-2``."""
    if trace >= n - 2:
        return math.inf
    return math.log(rss / n) + 1.0 + 2.0 * (trace + 1.0) / (n - trace - 2.0)


@dataclass(frozen=True)
class AiccResult:
    h: float
    grid: tuple
    values: tuple  # inf where excluded
    traces: tuple

    def to_dict(self):
        return {"h": self.h, "grid": list(self.grid),
                "aicc": [None if not math.isfinite(v) else v for v in self.values],
                "trace": list(self.traces)}


def aicc_univariate(x, partial_residual, p=1, kernel=None, grid=BandwidthSearch().grid, *,
                    grid_size=401, quadrature="gauss-legendre", cache=None, key=None) -> AiccResult:
    """Grid minimiser of AICc for the univariate smoother of ``partial_residual`` on ``x``.

    ``x`` must already be scaled to ``[0, 1]``.  ``cache`` (a dict) stores
    smoothers under ``(key, h)`` so repeated calls skip the construction.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(partial_residual, dtype=float)
    n = x.shape[0]
    values, traces = [], []
    for h in grid:
        ck = (key, float(h))
        H = None if cache is None else cache.get(ck)
        if H is None:
            cfg = SmootherConfig(p=p, h=float(h), grid_size=grid_size, quadrature=quadrature,
                                 **({} if kernel is None else {"kernel": kernel}))
            try:
                H = build_smoother(x, cfg).H
            except BandwidthTooSmallError:
                H = False
            if cache is not None:
                cache[ck] = H
        if H is False:
            values.append(math.inf)
            traces.append(math.nan)
            continue
        tr = float(np.trace(H))
        res = r - H @ r
        values.append(aicc(float(res @ res), tr, n))
        traces.append(tr)
    vals = np.asarray(values)
    if not np.any(np.isfinite(vals)):
        raise BandwidthGridTooSmallError("every candidate bandwidth has tr(H) >= n - 2")
    best = int(np.argmin(vals))
    return AiccResult(h=float(grid[best]), grid=tuple(grid), values=tuple(values), traces=tuple(traces))


@dataclass
class BandwidthSelection:
    h: tuple  # scaled units
    h_raw: tuple
    converged: bool
    cycles: int
    history: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    def to_dict(self):
        return {"h_scaled": list(self.h), "h_raw": list(self.h_raw), "converged": self.converged,
                "cycles": self.cycles, "history": [list(h) for h in self.history],
                "aicc_traces": self.traces}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _fit_star(bank, spec, y):
    """``(G⊥y, m̂*)`` for the current bandwidths."""
    try:
        hat = model_hat(bank, spec)
        m_star = hat.star @ y
        G = hat.G
    except BandwidthTooSmallError:
        # no closed form; the cycle still gives a usable partial residual
        d = bank.Xs.shape[1]
        scaled = Dataset(y=y, X=bank.Xs, lo=np.zeros(d), span=np.ones(d))
        m_star = fit_backfitting(scaled, spec, bank=bank).m_star
        G = _parametric_maps(bank.Xs, spec.param_orders)[0]
    return y - G @ y, m_star


def select_bandwidths_cv(data, spec: ModelSpec | None = None, search: BandwidthSearch = BandwidthSearch(),
                         *, initial=None) -> BandwidthSelection:
    """Coordinate-wise AICc search over the additive model's bandwidths.

    Each visit refits the model at the current bandwidths, forms the
    covariate's partial residual ``G⊥y - Σ_{l≠j} m̂*_l`` and replaces ``h_j``
    by the AICc minimiser on the grid.  Stops once the largest relative
    change within a cycle is below ``search.cycle_tol``.
    """
    d = data.d
    spec = (spec or ModelSpec(p=1)).for_dims(d)
    init = search.initial if initial is None else initial
    h = np.broadcast_to(np.asarray(init, dtype=float), (d,)).copy()
    spec = replace(spec, h=tuple(h.tolist()), exclude=(), null_degree=None)
    Xs = data.scaled
    y = data.y
    cache = {}
    history = [tuple(h.tolist())]
    traces = []
    converged = False
    cycles = 0
    for cycles in range(1, search.max_cycles + 1):
        h_prev = h.copy()
        for j in range(d):
            cur = replace(spec, h=tuple(h.tolist()))
            bank = SmootherBank(Xs, cur)
            for l in range(d):
                H = cache.get((l, float(h[l])))
                if H is not None and H is not False:
                    bank._H[l] = H
            r0, m_star = _fit_star(bank, cur, y)
            partial = r0 - (m_star.sum(axis=0) - m_star[j])
            res = aicc_univariate(Xs[:, j], partial, cur.p[j], cur.kernel, search.grid,
                                  grid_size=cur.grid_size, quadrature=cur.quadrature, cache=cache, key=j)
            h[j] = res.h
            traces.append({"cycle": cycles, "covariate": j, **res.to_dict()})
        history.append(tuple(h.tolist()))
        if np.max(np.abs(h - h_prev) / h_prev) < search.cycle_tol:
            converged = True
            break
    return BandwidthSelection(h=tuple(h.tolist()), h_raw=tuple((h * data.span).tolist()),
                              converged=converged, cycles=cycles, history=history, traces=traces)


def testing_bandwidth(x_sd, n, p_d=1):
    """Rate-optimal testing bandwidth ``S_X n^{-2/(8p+9)}`` (same units as ``x_sd``)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return float(x_sd) * float(n) ** (-2.0 / (8 * int(p_d) + 9))


def testing_bandwidths(data, p=1):
    """Per-covariate testing bandwidths in scaled units (sample sd over the range)."""
    p = np.broadcast_to(np.asarray(p), (data.d,))
    sd = data.X.std(axis=0, ddof=1)
    return tuple(testing_bandwidth(sd[j], data.n, int(p[j])) / data.span[j] for j in range(data.d))


def wilks_window(n, p=1):
    """Upper end of the bandwidth range ``(0, n^{-1/(4p+4)}]``."""
    return float(n) ** (-1.0 / (4 * int(p) + 4))


def check_wilks_window(h, n, p=1) -> bool:
    """Warn (and return False) when any bandwidth exceeds the Wilks window."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    p = np.broadcast_to(np.asarray(p), h.shape)
    upper = np.array([wilks_window(n, int(q)) for q in p])
    bad = np.flatnonzero(h > upper)
    if bad.size:
        warnings.warn(f"bandwidths {h[bad].tolist()} for covariates {bad.tolist()} exceed the Wilks "
                      f"window upper bounds {upper[bad].tolist()}", WilksWindowWarning, stacklevel=2)
        return False
    return True
