"""Test matrices, GLR / loss-function / F-type / backfit statistics and p-values."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .exceptions import (
    DegenerateFitError,
    DegenerateTestError,
    IncompatibleFitsError,
    LossOverflowError,
    QuadratureError,
)
from .kernel import KernelSpec, gauss_legendre, kernel_convolution

__all__ = [
    "TestMatrices",
    "ScalingConstants",
    "LossSpec",
    "TestStatistics",
    "TestReport",
    "STATISTICS",
    "test_matrices",
    "glr_statistic",
    "linex",
    "lf_statistic",
    "f_statistics",
    "sb_statistic",
    "sb_weights",
    "scaling_constants",
    "asymptotic_pvalues",
    "are_lf_glr",
    "TestProblem",
    "write_null_overlay",
]

STATISTICS = ("glr", "lf", "f_lambda", "f_q", "sb")


@dataclass(frozen=True)
class TestMatrices:
    """Exact test matrices from the full and reduced hat matrices.

    ``C = (I-W0)ᵀ(I-W0) - (I-W)ᵀ(I-W)``, ``D = (I-W)ᵀ(I-W)``, ``E = W - W0``.
    """

    __test__ = False

    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    provenance: str = "exact-from-hat-matrices"

    @property
    def trace_C(self):
        return float(np.trace(self.C))

    @property
    def trace_D(self):
        return float(np.trace(self.D))

    @property
    def trace_EtE(self):
        return float(np.sum(self.E * self.E))


def test_matrices(W, W_minus_d) -> TestMatrices:
    W = np.asarray(W, dtype=float)
    W0 = np.asarray(W_minus_d, dtype=float)
    if W.shape != W0.shape or W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise IncompatibleFitsError(f"hat matrices have shapes {W.shape} and {W0.shape}")
    I = np.eye(W.shape[0])
    R1 = I - W
    R0 = I - W0
    D = R1.T @ R1
    A1 = R0.T @ R0
    C = A1 - D
    C = 0.5 * (C + C.T)
    return TestMatrices(C=C, D=0.5 * (D + D.T), E=W - W0)


test_matrices.__test__ = False


def glr_statistic(rss0, rss1, n, form="log"):
    """``(n/2) log(RSS0/RSS1)``, or ``(n/2)(RSS0-RSS1)/RSS1`` with ``form='ratio'``."""
    rss0 = np.asarray(rss0, dtype=float)
    rss1 = np.asarray(rss1, dtype=float)
    if np.any(rss0 <= 0) or np.any(rss1 <= 0):
        raise DegenerateFitError("residual sums of squares must be positive")
    if form == "log":
        out = 0.5 * n * np.log(rss0 / rss1)
    elif form == "ratio":
        out = 0.5 * n * (rss0 - rss1) / rss1
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LossSpec:
    """LINEX loss ``d(z) = (t/s²)[exp(sz) - 1 - sz]`` with curvature ``M = t/2``."""

    s: float = 0.0
    t: float = 1.0
    family: str = "linex"

    def __post_init__(self):
        if self.family.lower() != "linex":
            raise ValueError("only the LINEX family is supported")
        if not self.t > 0:
            raise ValueError("LINEX scale t must be positive")

    @property
    def M(self) -> float:
        return self.t / 2.0


def _linex_unit(s, z):
    """LINEX with ``t = 1``."""
    z = np.asarray(z, dtype=float)
    if s == 0.0:
        return 0.5 * z * z
    sz = s * z
    small = np.abs(sz) < 1e-4
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = (np.expm1(sz) - sz) / (s * s)
    series = z * z * (0.5 + sz / 6.0 + sz * sz / 24.0)
    return np.where(small, series, big)


def linex(loss: LossSpec, z):
    out = loss.t * _linex_unit(loss.s, z)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(out)))[0])
        raise LossOverflowError(f"LINEX loss overflows at index {bad}", index=bad)
    return float(out) if np.ndim(out) == 0 else out


def _fitted(obj):
    return np.asarray(getattr(obj, "fitted", obj), dtype=float)


def lf_statistic(fit1, fit0, loss: LossSpec = LossSpec(), rss1=None):
    """``q_n = Σ d(m̂₊ - m̃₊) / (RSS₁/n)``.

    ``fit1``/``fit0`` are fits (or fitted-value arrays); ``rss1`` is taken from
    ``fit1`` when omitted.
    """
    f1 = _fitted(fit1)
    f0 = _fitted(fit0)
    if f1.shape != f0.shape:
        raise IncompatibleFitsError("fits have different lengths")
    if rss1 is None:
        rss1 = fit1.rss
    n = f1.shape[0]
    Q = np.sum(linex(loss, f1 - f0), axis=0)
    return Q / (np.asarray(rss1) / n)


def f_statistics(y, tm: TestMatrices):
    """``(F_λ, F_q)`` from the exact test matrices."""
    y = np.asarray(y, dtype=float)
    trC, trD, trE = tm.trace_C, tm.trace_D, tm.trace_EtE
    if trC < 1e-10 or trE < 1e-10:
        raise DegenerateTestError(f"degenerate test: tr(C)={trC:.3g}, tr(EᵀE)={trE:.3g}")
    yDy = y @ tm.D @ y
    Ey = tm.E @ y
    return float(y @ tm.C @ y / yDy * trD / trC), float(Ey @ Ey / yDy * trD / trE)


def _gaussian_kde(points, sample, h):
    u = (points[:, None] - sample[None, :]) / h
    return np.exp(-0.5 * u * u).mean(axis=1) / (h * math.sqrt(2 * math.pi))


def sb_weights(x, density_bandwidth=None, density=None):
    """Riemann weights ``f̂(x_(i)) (x_(i) - x_(i-1))`` mapped back to sample order.

    ``density`` overrides the Gaussian kernel density estimate.
    """
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    gaps = np.diff(xs, prepend=xs[0])
    if density is None:
        if density_bandwidth is None:
            raise ValueError("either density_bandwidth or density is required")
        f = _gaussian_kde(xs, x, density_bandwidth)
    else:
        f = np.broadcast_to(np.asarray(density, dtype=float), x.shape)[order]
    w = np.empty_like(x)
    w[order] = f * gaps
    return w


def sb_statistic(x, m_d, density_bandwidth=None, density=None):
    """``S_n = Σ m̂_d²(x_(i)) f̂(x_(i)) (x_(i) - x_(i-1))`` with ``x_(0) := x_(1)``."""
    w = sb_weights(x, density_bandwidth, density)
    m_d = np.asarray(m_d, dtype=float)
    out = w @ (m_d * m_d)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScalingConstants:
    mu_n: float
    sigma_n2: float
    r_k: float
    nu_n: float
    delta_n2: float
    s_k: float
    M: float

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


def scaling_constants(tm: TestMatrices, loss: LossSpec = LossSpec()) -> ScalingConstants:
    C, E = tm.C, tm.E
    mu = 0.5 * float(np.trace(C))
    sigma2 = 0.5 * (float(np.sum(C * C)) - float(np.sum(np.diag(C) ** 2)))
    EtE = E.T @ E
    nu = float(np.trace(EtE))
    delta2 = float(np.sum(EtE * EtE)) - float(np.sum(np.diag(EtE) ** 2))
    if not (sigma2 > 0 and delta2 > 0):
        raise DegenerateTestError(f"degenerate test: σ_n²={sigma2:.3g}, δ_n²={delta2:.3g}")
    return ScalingConstants(mu_n=mu, sigma_n2=sigma2, r_k=2 * mu / sigma2, nu_n=nu,
                            delta_n2=delta2, s_k=2 * nu / delta2, M=loss.M)


@dataclass(frozen=True)
class TestStatistics:
    """Statistic values; arrays when computed for several responses at once."""

    __test__ = False

    glr: float
    glr_ratio: float
    lf: float
    f_lambda: float
    f_q: float
    sb: float
    rss0: float
    rss1: float

    def get(self, name):
        return getattr(self, name)


def asymptotic_pvalues(st: TestStatistics, sc: ScalingConstants, tm: TestMatrices):
    """Upper-tail p-values: scaled χ² with fractional df for GLR/LF, F for the F-type tests."""
    df_glr = sc.r_k * sc.mu_n
    df_lf = sc.s_k * sc.nu_n
    df = (tm.trace_C, tm.trace_D, tm.trace_EtE)
    if min(df_glr, df_lf, *df) <= 0:
        raise DegenerateTestError("nonpositive degrees of freedom")
    return {
        "glr": float(stats.chi2.sf(sc.r_k * st.glr, df_glr)),
        "lf": float(stats.chi2.sf(sc.s_k * st.lf / sc.M, df_lf)),
        "f_lambda": float(stats.f.sf(st.f_lambda, df[0], df[1])),
        "f_q": float(stats.f.sf(st.f_q, df[2], df[1])),
        "sb": None,
    }


@dataclass
class TestReport:
    """Everything a test run produces; ``p_boot`` is filled by the bootstrap."""

    __test__ = False

    statistics: dict
    constants: ScalingConstants | None
    df_chi2_glr: float | None
    df_chi2_lf: float | None
    df_F_lambda: tuple | None
    df_F_q: tuple | None
    p_asym: dict
    tested: tuple
    null_form: str
    n: int
    loss: LossSpec
    p_boot: dict | None = None
    bootstrap: dict | None = None
    degenerate: bool = False
    notes: list = field(default_factory=list)
    bootstrap_result: object = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "n": self.n,
            "tested": list(self.tested),
            "null_form": self.null_form,
            "loss": asdict(self.loss),
            "statistics": {k: _num(v) for k, v in self.statistics.items()},
            "constants": None if self.constants is None else self.constants.to_dict(),
            "df": {
                "chi2_glr": _num(self.df_chi2_glr),
                "chi2_lf": _num(self.df_chi2_lf),
                "F_lambda": None if self.df_F_lambda is None else [float(v) for v in self.df_F_lambda],
                "F_q": None if self.df_F_q is None else [float(v) for v in self.df_F_q],
            },
            "p_asymptotic": {k: _num(v) for k, v in self.p_asym.items()},
            "p_bootstrap": None if self.p_boot is None else {k: _num(v) for k, v in self.p_boot.items()},
            "bootstrap": self.bootstrap,
            "degenerate": self.degenerate,
            "notes": list(self.notes),
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


# -- asymptotic relative efficiency -------------------------------------------------


def _panel_rule(breaks, n):
    """Composite Gauss-Legendre nodes/weights over consecutive break intervals."""
    x, w = gauss_legendre(n)
    a = breaks[..., :-1]
    b = breaks[..., 1:]
    half = (b - a) / 2
    nodes = (a + b)[..., None] / 2 + half[..., None] * x
    weights = half[..., None] * w
    shape = nodes.shape[:-2] + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)


@lru_cache(maxsize=64)
def _are_parts(spec: KernelSpec, n: int, conv_nodes: int):
    R = spec.radius
    c = lambda u: kernel_convolution(spec, 0, 0, u, nodes=conv_nodes)  # noqa: E731
    # K0*K0 lives on [-2R, 2R] with kinks at multiples of R; the self-convolution
    # of that lives on [-4R, 4R].
    outer_b = np.arange(-4, 5) * R
    u, wu = _panel_rule(outer_b, n)
    # inner integral over v of c(u+v) c(v): break where either factor kinks
    base = np.arange(-2, 3) * R
    br = np.concatenate([np.broadcast_to(base, (len(u), 5)), -u[:, None] + base], axis=1)
    br = np.sort(np.clip(br, -2 * R, 2 * R), axis=1)
    v, wv = _panel_rule(br, n)
    cu = c(u)
    cv = c(v.ravel()).reshape(v.shape)
    cuv = c((u[:, None] + v).ravel()).reshape(v.shape)
    inner = np.sum(cuv * cv * wv, axis=1)
    num = np.sum((2 * cu - inner) ** 2 * wu)
    den = np.sum(inner**2 * wu)
    return num, den


def are_lf_glr(kernel=None, omega=0.1, *, tol=1e-10, nodes=16, max_nodes=256, conv_nodes=256):
    """Asymptotic relative efficiency of the loss-function test over the GLR test.

    Local-constant case; valid for ``0 < omega < 1/5``.  Nested composite
    Gauss-Legendre quadrature with panels split at the kernel's kinks; the
    per-panel node count doubles until the ratio is stable to ``tol``.
    """
    spec = kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel or "gaussian")
    if not (0 < omega < 0.2):
        raise ValueError("omega must lie in (0, 1/5)")
    prev = None
    n = nodes
    while n <= max_nodes:
        num, den = _are_parts(spec, n, conv_nodes)
        ratio = num / den
        if prev is not None and abs(ratio - prev) <= tol * abs(ratio):
            return float(ratio ** (1.0 / (2.0 - 3.0 * omega)))
        prev = ratio
        n *= 2
    raise QuadratureError(f"ARE quadrature did not stabilise with {max_nodes} nodes per panel")


# -- vectorised test problem --------------------------------------------------------


class TestProblem:
    """Every linear map a test needs, built once per covariate matrix and bandwidth set.

    All statistics are functions of ``W y`` and ``W0 y``, so evaluating them for
    many responses (bootstrap replicates) costs matrix products only.

    Parameters
    ----------
    data : Dataset
    spec : ModelSpec
        Full-model orders and bandwidths (scaled units).
    tested : int or sequence of int
        Covariates removed under the null.
    null_degree : int, optional
        Keep the tested covariates' powers up to this degree in the null
        (composite polynomial null).  ``None`` omits them.
    loss : LossSpec
    bank : SmootherBank, optional
        Reuse smoothers already built for these covariates and bandwidths.
    """

    __test__ = False

    def __init__(self, data, spec, tested, *, null_degree=None, loss=LossSpec(), bank=None):
        from dataclasses import replace as _replace

        from .backfit import SmootherBank, model_hat

        self.data = data
        self.spec = _replace(spec.for_dims(data.d), exclude=(), null_degree=None)
        self.tested = tuple(sorted(int(t) for t in np.atleast_1d(tested)))
        if any(not 0 <= t < data.d for t in self.tested):
            raise ValueError(f"tested covariates {self.tested} out of range for d={data.d}")
        self.null_degree = null_degree
        self.loss = loss
        self.bank = bank if bank is not None else SmootherBank(data.scaled, self.spec)
        self.full = model_hat(self.bank, self.spec)
        self.reduced = model_hat(self.bank, self.spec.null(self.tested, null_degree))
        self.W = self.full.W
        self.W0 = self.reduced.W
        self.tm = test_matrices(self.W, self.W0)
        self.degenerate = bool(np.max(np.abs(self.tm.E), initial=0.0) < 1e-12)
        self.constants = None
        if not self.degenerate:
            self.constants = scaling_constants(self.tm, loss)
        self.component_map = self._component_map()
        Xs = data.scaled
        if self.tested:
            d0 = self.tested[0]
            self.sb_w = sb_weights(Xs[:, d0], density_bandwidth=self.spec.h[d0])
        else:
            self.sb_w = np.zeros(data.n)

    @property
    def null_form(self):
        if self.null_degree is None:
            return "omit"
        return "linear" if self.null_degree == 1 else f"polynomial:{self.null_degree}"

    def _component_map(self):
        n = self.data.n
        out = np.zeros((n, n))
        for t in self.tested:
            if self.null_degree is not None and self.null_degree >= self.spec.p[t]:
                out += self.full.star[t]  # deviation from the polynomial null
            else:
                out += self.full.component(t)
        return out

    def statistics(self, Y, *, validate=True):
        """Statistics for one response (returns floats) or columns of ``Y``."""
        Y = np.asarray(Y, dtype=float)
        single = Y.ndim == 1
        Y2 = Y[:, None] if single else Y
        n = Y2.shape[0]
        F1 = self.W @ Y2
        F0 = self.W0 @ Y2
        R1 = Y2 - F1
        R0 = Y2 - F0
        rss1 = np.einsum("ij,ij->j", R1, R1)
        rss0 = np.einsum("ij,ij->j", R0, R0)
        diff = F1 - F0
        Md = self.component_map @ Y2
        sb = self.sb_w @ (Md * Md)
        if self.degenerate:
            zero = np.zeros(Y2.shape[1])
            out = dict(glr=zero, glr_ratio=zero, lf=zero, f_lambda=zero, f_q=zero, sb=sb,
                       rss0=rss0, rss1=rss1)
        else:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                glr = 0.5 * n * np.log(rss0 / rss1)
                glr_ratio = 0.5 * n * (rss0 - rss1) / rss1
                loss_sum = np.sum(self.loss.t * _linex_unit(self.loss.s, diff), axis=0)
                lf = loss_sum / (rss1 / n)
                # yᵀCy = RSS0 - RSS1 exactly; computing it through RSS keeps the
                # F_λ/λ identity at rounding level
                f_lambda = (rss0 - rss1) / rss1 * self.tm.trace_D / self.tm.trace_C
                f_q = np.einsum("ij,ij->j", diff, diff) / rss1 * self.tm.trace_D / self.tm.trace_EtE
            out = dict(glr=glr, glr_ratio=glr_ratio, lf=lf, f_lambda=f_lambda, f_q=f_q, sb=sb,
                       rss0=rss0, rss1=rss1)
        if validate and single:
            if not (rss0[0] > 0 and rss1[0] > 0):
                raise DegenerateFitError("residual sums of squares must be positive")
            if not np.isfinite(out["lf"][0]):
                raise LossOverflowError("LINEX loss overflowed on the observed data")
        if single:
            return TestStatistics(**{k: float(v[0]) for k, v in out.items()})
        return out

    def scaled(self, st):
        """``(r_k λ_n, s_k q_n / M)`` for statistics ``st`` (dict or TestStatistics)."""
        get = st.get if isinstance(st, dict) else st.get
        sc = self.constants
        return sc.r_k * np.asarray(get("glr")), sc.s_k * np.asarray(get("lf")) / sc.M

    def report(self, y=None) -> TestReport:
        y = self.data.y if y is None else np.asarray(y, dtype=float)
        st = self.statistics(y)
        stat_dict = {
            "lambda_n": st.glr,
            "lambda_n_ratio": st.glr_ratio,
            "q_n": st.lf,
            "F_lambda": st.f_lambda,
            "F_q": st.f_q,
            "S_n": st.sb,
            "rss0": st.rss0,
            "rss1": st.rss1,
        }
        notes = []
        if self.degenerate:
            notes.append("full and restricted models coincide; all statistics are zero")
            p = {k: 1.0 for k in STATISTICS}
            return TestReport(statistics=stat_dict, constants=None, df_chi2_glr=None, df_chi2_lf=None,
                              df_F_lambda=None, df_F_q=None, p_asym=p, tested=self.tested,
                              null_form=self.null_form, n=self.data.n, loss=self.loss,
                              degenerate=True, notes=notes)
        sc = self.constants
        p = asymptotic_pvalues(st, sc, self.tm)
        return TestReport(
            statistics=stat_dict,
            constants=sc,
            df_chi2_glr=sc.r_k * sc.mu_n,
            df_chi2_lf=sc.s_k * sc.nu_n,
            df_F_lambda=(self.tm.trace_C, self.tm.trace_D),
            df_F_q=(self.tm.trace_EtE, self.tm.trace_D),
            p_asym=p,
            tested=self.tested,
            null_form=self.null_form,
            n=self.data.n,
            loss=self.loss,
            notes=notes,
        )


def write_null_overlay(path, problem: TestProblem, result, grid_points=200):
    """CSV overlaying bootstrap null densities of ``r_k λ_n`` and ``s_k q_n / M`` on their χ² limits.

    Bootstrap densities use a Gaussian KDE with bandwidth ``1.06 s B^{-1/5}``.
    """
    import csv

    sc = problem.constants
    scaled = {"glr_scaled": (sc.r_k * result.null_samples["glr"], sc.r_k * sc.mu_n),
              "lf_scaled": (sc.s_k * result.null_samples["lf"] / sc.M, sc.s_k * sc.nu_n)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "x", "bootstrap_density", "chi2_density", "chi2_df"])
        for name, (samples, df) in scaled.items():
            samples = samples[np.isfinite(samples)]
            hi = max(float(np.quantile(samples, 0.999)), float(stats.chi2.ppf(0.999, df))) * 1.1
            x = np.linspace(0.0, hi, grid_points)
            if samples.size > 1 and np.std(samples) > 0:
                kde = stats.gaussian_kde(samples, bw_method=1.06 * samples.size ** -0.2)(x)
            else:
                kde = np.full_like(x, np.nan)
            chi = stats.chi2.pdf(x, df)
            for xi, a, b in zip(x, kde, chi):
                w.writerow([name, repr(float(xi)), repr(float(a)), repr(float(b)), repr(float(df))])
