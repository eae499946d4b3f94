"""scikit-learn compatible wrappers around the fitting and testing routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .backfit import ModelSpec, evaluate_components, fit_backfitting, fit_explicit
from .bandwidth import BandwidthSearch, select_bandwidths_cv, testing_bandwidths
from .bootstrap import run_test
from .data import Dataset
from .inference import LossSpec
from .kernel import KernelSpec

__all__ = ["SmoothBackfitRegressor", "ComponentTest", "parse_null"]


def _resolve_bandwidths(bandwidth, data, p, search=None, spec=None):
    """Scaled bandwidths from a number, a sequence, ``'auto'`` (AICc) or ``'testing'``."""
    if isinstance(bandwidth, str):
        if bandwidth == "auto":
            sel = select_bandwidths_cv(data, spec or ModelSpec(p=p), search or BandwidthSearch())
            return tuple(sel.h), sel
        if bandwidth == "testing":
            return testing_bandwidths(data, p), None
        raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (data.d,))
    return tuple(h.tolist()), None


class SmoothBackfitRegressor(RegressorMixin, BaseEstimator):
    """Additive regression by simplified smooth backfitting.

    Parameters
    ----------
    p : int or sequence of int, default=1
        Local polynomial order per covariate (0..3).
    bandwidth : float, sequence, 'auto' or 'testing', default=0.2
        Bandwidths on the [0, 1]-scaled covariates.  ``'auto'`` runs the
        AICc coordinate search; ``'testing'`` uses ``S_X n^{-2/(8p+9)}``.
    kernel : {'gaussian', 'epanechnikov', 'uniform'}, default='gaussian'
    method : {'explicit', 'backfitting'}, default='explicit'
    grid_size : int, default=401
    quadrature : {'gauss-legendre', 'midpoint'}, default='gauss-legendre'
    max_iter, tol
        Controls for ``method='backfitting'``.

    Attributes
    ----------
    fit_ : AdditiveFit
    bandwidths_ : tuple of float
        Scaled bandwidths actually used.
    intercept_ : float
    """

    def __init__(self, p=1, bandwidth=0.2, kernel="gaussian", method="explicit", grid_size=401,
                 quadrature="gauss-legendre", max_iter=100, tol=1e-8):
        self.p = p
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.method = method
        self.grid_size = grid_size
        self.quadrature = quadrature
        self.max_iter = max_iter
        self.tol = tol

    def _spec(self, h):
        return ModelSpec(p=self.p, h=h, kernel=KernelSpec(self.kernel), grid_size=self.grid_size,
                         quadrature=self.quadrature, max_iter=self.max_iter, tol=self.tol)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_samples=3)
        data = Dataset(y=y, X=X)
        search_spec = self._spec(0.3)
        h, self.bandwidth_search_ = _resolve_bandwidths(self.bandwidth, data, self.p, spec=search_spec)
        spec = self._spec(h).for_dims(data.d)
        if self.method == "explicit":
            self.fit_ = fit_explicit(data, spec)
        elif self.method == "backfitting":
            self.fit_ = fit_backfitting(data, spec)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.data_ = data
        self.bandwidths_ = spec.h
        self.intercept_ = self.fit_.alpha0
        return self

    def components(self, X):
        """Component totals ``m̂_j`` at the rows of ``X`` (``n × d``)."""
        check_is_fitted(self, "fit_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return evaluate_components(self.fit_, self.data_, X)[0]

    def predict(self, X):
        return self.intercept_ + self.components(X).sum(axis=1)


def parse_null(form):
    """``'omit'`` → None, ``'linear'`` → 1, ``'polynomial:k'`` → k."""
    if form in (None, "omit"):
        return None
    if form == "linear":
        return 1
    if isinstance(form, str) and form.startswith("polynomial:"):
        k = int(form.split(":", 1)[1])
        if not 0 <= k <= 3:
            raise ValueError("polynomial null degree must lie in 0..3")
        return k
    raise ValueError(f"unknown null form {form!r}; use omit, linear or polynomial:k")


class ComponentTest(BaseEstimator):
    """Test whether covariate ``tested`` contributes to an additive model.

    ``fit`` computes the GLR, loss-function, F-type and backfit statistics,
    their asymptotic p-values and, for ``B > 0``, conditional bootstrap
    p-values.

    Attributes
    ----------
    report_ : TestReport
    pvalues_ : dict
        Bootstrap p-values when available, asymptotic otherwise.
    """

    def __init__(self, tested=0, null="omit", p=1, bandwidth=0.2, kernel="gaussian", B=200, seed=0,
                 loss_s=0.0, loss_t=1.0, workers=None):
        self.tested = tested
        self.null = null
        self.p = p
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.B = B
        self.seed = seed
        self.loss_s = loss_s
        self.loss_t = loss_t
        self.workers = workers

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True, ensure_min_samples=3)
        data = Dataset(y=y, X=X)
        h, _ = _resolve_bandwidths(self.bandwidth, data, self.p)
        spec = ModelSpec(p=self.p, h=h, kernel=KernelSpec(self.kernel)).for_dims(data.d)
        self.report_ = run_test(data, spec, self.tested, null_degree=parse_null(self.null),
                                loss=LossSpec(self.loss_s, self.loss_t), B=self.B, seed=self.seed,
                                workers=self.workers)
        self.bandwidths_ = spec.h
        self.pvalues_ = dict(self.report_.p_boot or self.report_.p_asym)
        return self
