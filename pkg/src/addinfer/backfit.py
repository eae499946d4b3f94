"""Simplified smooth backfitting: iterative cycle, explicit solution, hat matrices.

Each component smoother ``H_j`` has the polynomials of degree ``<= p_j`` as
eigenvectors with eigenvalue one.  Those are carried by the parametric
projection ``G``; the cycle runs the modified smoothers ``S_j = H_j - G_j``
on ``G⊥y``.  Its fixed point is ``m*_j = A_j (I + A)⁻¹ G⊥ y`` with
``A_j = (I - S_j)⁻¹ S_j`` and ``A = Σ A_j``, which gives the hat matrix
``W = Σ_j A_j (I + A)⁻¹ G⊥ + G``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .design import RANK_TOL, build_design, orthonormal_basis, projection
from .design import ConcurvityWarning
from .exceptions import BandwidthTooSmallError, IncompatibleFitsError, InsufficientLocalDataError
from .kernel import KernelSpec, kernel_eval
from .smoother import SmootherConfig, _LocalFactors, build_smoother, local_poly_fit, quadrature_grid

__all__ = [
    "ModelSpec",
    "AdditiveFit",
    "GridEstimates",
    "SmootherBank",
    "HatSet",
    "model_hat",
    "fit_backfitting",
    "fit_explicit",
    "hat_matrices",
    "grid_estimates",
    "evaluate_components",
    "normal_equation_residual",
]

UNIT_EIG_TOL = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """Per-covariate orders and bandwidths (scaled units) plus solver controls.

    ``exclude`` removes covariates from the smoothing cycle.  With
    ``null_degree = k`` an excluded covariate keeps its powers up to ``k`` in
    the parametric part; with ``None`` it is dropped entirely.
    """

    p: tuple = (1,)
    h: tuple = (0.2,)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    grid_size: int = 401
    max_iter: int = 100
    tol: float = 1e-8
    ridge_tol: float = 1e-8
    quadrature: str = "gauss-legendre"
    exclude: tuple = ()
    null_degree: int | None = None

    def __post_init__(self):
        p = tuple(int(v) for v in np.atleast_1d(self.p))
        h = tuple(float(v) for v in np.atleast_1d(self.h))
        d = max(len(p), len(h))
        p = tuple(np.broadcast_to(p, (d,)).tolist())
        h = tuple(np.broadcast_to(h, (d,)).tolist())
        if any(v not in (0, 1, 2, 3) for v in p):
            raise ValueError(f"orders must lie in 0..3, got {p}")
        if any(not (np.isfinite(v) and v > 0) for v in h):
            raise ValueError(f"bandwidths must be positive, got {h}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not isinstance(self.kernel, KernelSpec):
            object.__setattr__(self, "kernel", KernelSpec(str(self.kernel)))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "exclude", tuple(sorted(int(j) for j in np.atleast_1d(self.exclude))))

    @property
    def d(self) -> int:
        return len(self.p)

    def for_dims(self, d: int) -> "ModelSpec":
        if self.d == d:
            return self
        if self.d != 1:
            raise ValueError(f"spec has {self.d} covariates, data has {d}")
        return replace(self, p=self.p * d, h=self.h * d)

    def smoother_config(self, j: int) -> SmootherConfig:
        return SmootherConfig(p=self.p[j], h=self.h[j], kernel=self.kernel,
                              grid_size=self.grid_size, ridge_tol=self.ridge_tol,
                              quadrature=self.quadrature)

    @property
    def param_orders(self) -> tuple:
        deg = 0 if self.null_degree is None else int(self.null_degree)
        return tuple(deg if j in self.exclude else self.p[j] for j in range(self.d))

    @property
    def smooth_set(self) -> tuple:
        return tuple(j for j in range(self.d) if j not in self.exclude)

    def null(self, tested, null_degree=None) -> "ModelSpec":
        return replace(self, exclude=tuple(np.atleast_1d(tested)), null_degree=null_degree)


class SmootherBank:
    """Smoothers, polynomial projections and ``A_j`` for one covariate matrix.

    Everything here depends only on the covariates and the smoothing
    parameters, so a bank is shared by the full and reduced models and across
    bootstrap replicates.
    """

    def __init__(self, Xs, spec: ModelSpec, *, check_spectrum=True):
        self.Xs = np.asarray(Xs, dtype=float)
        self.n, d = self.Xs.shape
        self.spec = spec.for_dims(d)
        self.check_spectrum = check_spectrum
        self._H = {}
        self._A = {}
        self._Gj = {}
        self.timings = {}

    def with_bandwidth(self, j, h) -> "SmootherBank":
        """Bank with covariate ``j``'s bandwidth replaced; other caches are shared."""
        h_new = list(self.spec.h)
        h_new[j] = float(h)
        other = SmootherBank(self.Xs, replace(self.spec, h=tuple(h_new)),
                             check_spectrum=self.check_spectrum)
        for cache, src in ((other._H, self._H), (other._A, self._A), (other._Gj, self._Gj)):
            cache.update({k: v for k, v in src.items() if k != j})
        other._Gj.update(self._Gj)
        return other

    def H(self, j):
        if j not in self._H:
            t = time.perf_counter()
            self._H[j] = build_smoother(self.Xs[:, j], self.spec.smoother_config(j), j).H
            self.timings[f"smoother_{j}"] = time.perf_counter() - t
        return self._H[j]

    def G_j(self, j):
        if j not in self._Gj:
            self._Gj[j] = projection(self.Xs[:, j : j + 1] ** np.arange(self.spec.p[j] + 1))
        return self._Gj[j]

    def S(self, j):
        return self.H(j) - self.G_j(j)

    def A(self, j):
        if j not in self._A:
            S = self.S(j)
            if self.check_spectrum:
                top = np.linalg.eigvalsh(S)[-1]
                if top >= 1.0 - UNIT_EIG_TOL:
                    raise BandwidthTooSmallError(
                        f"modified smoother for covariate {j} has eigenvalue {top:.12f} >= 1 "
                        f"(h={self.spec.h[j]}); bandwidth too small",
                        eigenvalue=float(top),
                    )
            self._A[j] = np.linalg.solve(np.eye(self.n) - S, S)
        return self._A[j]


@dataclass(frozen=True)
class HatSet:
    """Linear maps from ``y`` to every piece of a fit.

    ``star[j]`` and ``par[j]`` are ``n × n`` maps to ``m*_j`` and ``ĝ_j``
    (zero for covariates outside the model); ``W`` maps to fitted values.
    """

    W: np.ndarray
    G: np.ndarray
    star: np.ndarray
    par: np.ndarray
    design: np.ndarray
    design_owner: np.ndarray
    smooth_set: tuple
    rank_deficient: bool

    def component(self, j):
        return self.star[j] + self.par[j]


def _parametric_maps(Xs, orders):
    ds = build_design(Xs, orders)
    X = ds.X_full
    n = X.shape[0]
    owner = ds.col_owner
    Xc = X[:, 1:] - X[:, 1:].mean(axis=0)
    d = Xs.shape[1]
    par = np.zeros((d, n, n))
    rank_def = False
    if Xc.shape[1]:
        # min-norm coefficients: rank deficiency leaves G intact
        B = np.linalg.pinv(Xc, rcond=RANK_TOL)
        rank_def = orthonormal_basis(X).shape[1] < X.shape[1]
        for j in range(d):
            cols = owner[1:] == j
            if cols.any():
                par[j] = Xc[:, cols] @ B[cols]
    G = np.full((n, n), 1.0 / n) + par.sum(axis=0)
    return G, par, X, owner, rank_def


def model_hat(bank: SmootherBank, spec: ModelSpec | None = None) -> HatSet:
    """Hat matrices of the model described by ``spec`` (defaults to the bank's spec)."""
    spec = bank.spec if spec is None else spec.for_dims(bank.Xs.shape[1])
    if spec.p != bank.spec.p or spec.h != bank.spec.h:
        raise IncompatibleFitsError("model spec does not match the smoother bank")
    n = bank.n
    G, par, X, owner, rank_def = _parametric_maps(bank.Xs, spec.param_orders)
    if rank_def:
        warnings.warn("exact concurvity in the polynomial design", ConcurvityWarning, stacklevel=2)
    I = np.eye(n)
    Gperp = I - G
    J = spec.smooth_set
    star = np.zeros_like(par)
    if J:
        A_sum = sum(bank.A(j) for j in J)
        T = np.linalg.solve(I + A_sum, Gperp)
        for j in J:
            star[j] = bank.A(j) @ T
    W = G + star.sum(axis=0)
    return HatSet(W=W, G=G, star=star, par=par, design=X, design_owner=owner,
                  smooth_set=J, rank_deficient=rank_def)


@dataclass(frozen=True)
class AdditiveFit:
    alpha0: float
    g: np.ndarray
    m_star: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rss: float
    iterations: int
    converged: bool
    method: str
    spec: ModelSpec
    W: np.ndarray | None = None
    last_change: float = 0.0
    change_history: tuple = ()
    concurvity: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def m(self):
        """Component totals ``m̂_j = ĝ_j + m̂*_j`` as a ``d × n`` array."""
        return self.g + self.m_star

    def to_dict(self):
        return {
            "method": self.method,
            "alpha0": float(self.alpha0),
            "rss": float(self.rss),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "last_change": float(self.last_change),
            "concurvity": bool(self.concurvity),
            "p": list(self.spec.p),
            "h_scaled": list(self.spec.h),
            "excluded": list(self.spec.exclude),
            "components": [row.tolist() for row in self.m],
            "m_star": [row.tolist() for row in self.m_star],
            "g": [row.tolist() for row in self.g],
            "fitted": self.fitted.tolist(),
            "residuals": self.residuals.tolist(),
            "timings": {k: float(v) for k, v in self.timings.items()},
        }


def _coerce(data, spec):
    if not isinstance(data, Dataset):
        raise TypeError("data must be a Dataset")
    return spec.for_dims(data.d)


def _fit_from_hat(hat: HatSet, y, spec, *, method, iterations=0, converged=True, timings=None):
    y = np.asarray(y, dtype=float)
    alpha0 = float(y.mean())
    g = hat.par @ y
    m_star = hat.star @ y
    fitted = alpha0 + g.sum(axis=0) + m_star.sum(axis=0)
    resid = y - fitted
    return AdditiveFit(alpha0=alpha0, g=g, m_star=m_star, fitted=fitted, residuals=resid,
                       rss=float(resid @ resid), iterations=iterations, converged=converged,
                       method=method, spec=spec, W=hat.W, concurvity=hat.rank_deficient,
                       timings=timings or {})


def fit_explicit(data: Dataset, spec: ModelSpec, *, bank: SmootherBank | None = None) -> AdditiveFit:
    """Closed-form fit through the hat matrices; no iteration."""
    spec = _coerce(data, spec)
    t0 = time.perf_counter()
    bank = bank or SmootherBank(data.scaled, replace(spec, exclude=(), null_degree=None))
    hat = model_hat(bank, spec)
    timings = dict(bank.timings, total=time.perf_counter() - t0)
    return _fit_from_hat(hat, data.y, spec, method="explicit", timings=timings)


def fit_backfitting(data: Dataset, spec: ModelSpec, *, bank: SmootherBank | None = None,
                    order=None) -> AdditiveFit:
    """Gauss-Seidel cycle over the modified smoothers, started from zero.

    Stops when every component's relative sup-norm change falls below
    ``spec.tol`` or after ``spec.max_iter`` sweeps (``converged=False``).
    """
    spec = _coerce(data, spec)
    t0 = time.perf_counter()
    bank = bank or SmootherBank(data.scaled, replace(spec, exclude=(), null_degree=None),
                                check_spectrum=False)
    y = data.y
    n = data.n
    G, par, X, owner, rank_def = _parametric_maps(bank.Xs, spec.param_orders)
    if rank_def:
        warnings.warn("exact concurvity in the polynomial design", ConcurvityWarning, stacklevel=2)
    J = list(spec.smooth_set if order is None else order)
    if sorted(J) != list(spec.smooth_set):
        raise ValueError("order must be a permutation of the smoothed covariates")
    S = {j: bank.S(j) for j in J}
    r0 = y - G @ y
    m_star = np.zeros((data.d, n))
    total = np.zeros(n)
    history = []
    converged = False
    it = 0
    t1 = time.perf_counter()
    for it in range(1, spec.max_iter + 1):
        change = 0.0
        for j in J:
            old = m_star[j].copy()
            new = S[j] @ (r0 - (total - old))
            total += new - old
            m_star[j] = new
            change = max(change, np.max(np.abs(new - old)) / (1.0 + np.max(np.abs(old))))
        history.append(change)
        if change < spec.tol:
            converged = True
            break
    alpha0 = float(y.mean())
    g = par @ y
    fitted = alpha0 + g.sum(axis=0) + m_star.sum(axis=0)
    resid = y - fitted
    timings = dict(bank.timings, cycle=time.perf_counter() - t1, total=time.perf_counter() - t0)
    return AdditiveFit(alpha0=alpha0, g=g, m_star=m_star, fitted=fitted, residuals=resid,
                       rss=float(resid @ resid), iterations=it, converged=converged,
                       method="backfitting", spec=spec, last_change=history[-1] if history else 0.0,
                       change_history=tuple(history), concurvity=rank_def, timings=timings)


def hat_matrices(data: Dataset, spec: ModelSpec, tested, *, null_degree=None,
                 bank: SmootherBank | None = None):
    """``(W, W_minus_d)``: hat matrices of the full model and of the reduced model.

    The reduced model drops the tested covariates from the smoothing cycle and
    from the polynomial design (or keeps their powers up to ``null_degree``)
    and reuses the same bandwidths for everything else.
    """
    spec = _coerce(data, replace(spec, exclude=(), null_degree=None))
    bank = bank or SmootherBank(data.scaled, spec)
    full = model_hat(bank, spec)
    reduced = model_hat(bank, spec.null(tested, null_degree))
    return full.W, reduced.W


def normal_equation_residual(fit: AdditiveFit, bank: SmootherBank, y, *, literal=False):
    """Residual norm of the stacked backfitting normal equations at a fit.

    The default checks the system solved by the cycle,
    ``m*_j + S_j Σ_{l≠j} m*_l = S_j G⊥y``.  ``literal=True`` evaluates
    ``m_j + H_j Σ_{l≠j} m_l = H_j (y - α̂0)`` with the component totals.
    """
    y = np.asarray(y, dtype=float)
    J = fit.spec.smooth_set
    G, *_ = _parametric_maps(bank.Xs, fit.spec.param_orders)
    if literal:
        comps = fit.m
        target = y - fit.alpha0
        blocks = [comps[j] + bank.H(j) @ (comps.sum(axis=0) - comps[j]) - bank.H(j) @ target
                  for j in range(fit.spec.d)]
    else:
        comps = fit.m_star
        r0 = y - G @ y
        blocks = [comps[j] + bank.S(j) @ (comps.sum(axis=0) - comps[j]) - bank.S(j) @ r0 for j in J]
    return float(np.linalg.norm(np.concatenate(blocks)))


def evaluate_components(fit: AdditiveFit, data: Dataset, X_new, *, scaled=False):
    """Component totals, nonparametric and parametric parts at new covariate rows.

    Returns ``(m, m_star, g)``, each ``len(X_new) × d``.  The nonparametric
    part is extended with the smoother rows at the new points, so at the
    sample points it reproduces the fit.
    """
    spec = fit.spec
    Xs = data.scaled
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    Zs = np.clip(X_new if scaled else data.to_scaled(X_new), 0.0, 1.0)
    k = Zs.shape[0]
    d = data.d
    y = data.y
    ds = build_design(Xs, spec.param_orders)
    Xc_mean = ds.X_full[:, 1:].mean(axis=0)
    Xc = ds.X_full[:, 1:] - Xc_mean
    coef = np.linalg.lstsq(Xc, y - y.mean(), rcond=RANK_TOL)[0] if Xc.shape[1] else np.zeros(0)
    g_new = np.zeros((k, d))
    for c, (j, pw) in enumerate(zip(ds.col_owner[1:], ds.col_power[1:])):
        g_new[:, j] += (Zs[:, j] ** pw - Xc_mean[c]) * coef[c]
    G = np.full((data.n, data.n), 1.0 / data.n) + _parametric_maps(Xs, spec.param_orders)[1].sum(axis=0)
    r0 = y - G @ y
    star_new = np.zeros((k, d))
    total = fit.m_star.sum(axis=0)
    for j in spec.smooth_set:
        v = r0 - (total - fit.m_star[j])
        fac = _LocalFactors(Xs[:, j], spec.smoother_config(j))
        hv = fac.phi(Zs[:, j]) @ (fac.phi().T @ v)
        basis = Xs[:, j : j + 1] ** np.arange(spec.p[j] + 1)
        pc = np.linalg.lstsq(basis, v, rcond=None)[0]
        star_new[:, j] = hv - (Zs[:, j : j + 1] ** np.arange(spec.p[j] + 1)) @ pc
    return g_new + star_new, star_new, g_new


@dataclass(frozen=True)
class GridEstimates:
    z: np.ndarray
    beta: tuple  # per covariate: (len(z), p_j + 1), NaN where the local fit failed

    def to_dict(self):
        return {"z": self.z.tolist(),
                "beta": [np.where(np.isnan(b), None, b).tolist() for b in self.beta]}


def grid_estimates(fit: AdditiveFit, data: Dataset, grid=None) -> GridEstimates:
    """Local polynomial regression of each covariate's partial residual on a grid.

    The partial residual for covariate ``j`` is ``G⊥y - Σ_{l≠j} m̂*_l``.
    Coefficients are in the ``(x - z)^r`` basis on the scaled covariate.
    """
    spec = fit.spec
    Xs = data.scaled
    y = data.y
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    G = np.full((data.n, data.n), 1.0 / data.n) + _parametric_maps(Xs, spec.param_orders)[1].sum(axis=0)
    r0 = y - G @ y
    m = fit.m_star
    betas = []
    for j in range(data.d):
        p = spec.p[j]
        out = np.full((len(grid), p + 1), np.nan)
        if j in spec.smooth_set:
            cfg = spec.smoother_config(j)
            resid = r0 - (m.sum(axis=0) - m[j])
            x = Xs[:, j]
            kern_norm = _observation_normalisers(x, cfg)
            for k, z0 in enumerate(grid):
                w = kernel_eval(cfg.kernel, (z0 - x) / cfg.h) / cfg.h / kern_norm
                out[k] = _safe_local_fit(x, resid, z0, p, cfg.h, w)
        betas.append(out)
    return GridEstimates(z=grid, beta=tuple(betas))


def _observation_normalisers(x, cfg):
    z, q = quadrature_grid(cfg.grid_size, cfg.quadrature)
    return (kernel_eval(cfg.kernel, (z[None, :] - x[:, None]) / cfg.h) / cfg.h) @ q


def _safe_local_fit(x, r, z0, p, h, w):
    try:
        return local_poly_fit(x, r, z0, p=p, h=h, weights=w)
    except InsufficientLocalDataError:
        return np.full(p + 1, np.nan)
