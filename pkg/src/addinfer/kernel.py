"""Kernel functions, boundary-corrected kernels, moments and convolutions.

All kernels are symmetric probability densities with compact support
``[-R, R]`` in kernel units: ``R = 1`` for the Epanechnikov and uniform
kernels and ``R = truncation_radius`` for the (truncated, renormalised)
Gaussian kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erf, ndtr

from .exceptions import DegenerateBandwidthError, InvalidBandwidthError, QuadratureError

__all__ = [
    "KernelSpec",
    "KernelMoments",
    "kernel_eval",
    "kernel_cdf",
    "scaled_kernel",
    "boundary_kernel",
    "boundary_normalizer",
    "kernel_moments",
    "kernel_convolution",
    "gauss_legendre",
]

FAMILIES = ("gaussian", "epanechnikov", "uniform")

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus the truncation radius used for the Gaussian kernel."""

    family: str = "gaussian"
    truncation_radius: float = 6.0

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be positive")

    @property
    def radius(self) -> float:
        """Half-width of the support in kernel units."""
        return float(self.truncation_radius) if self.family == "gaussian" else 1.0

    @property
    def _gauss_mass(self) -> float:
        return float(erf(self.truncation_radius / np.sqrt(2.0)))


def _as_spec(spec) -> KernelSpec:
    if isinstance(spec, KernelSpec):
        return spec
    return KernelSpec(str(spec))


def kernel_eval(spec, u):
    """Evaluate ``K(u)``; zero outside the support."""
    spec = _as_spec(spec)
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= spec.radius
    if spec.family == "gaussian":
        val = np.exp(-0.5 * u * u) / (_SQRT_2PI * spec._gauss_mass)
    elif spec.family == "epanechnikov":
        val = 0.75 * (1.0 - u * u)
    else:
        val = np.full_like(u, 0.5)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_cdf(spec, u):
    """Closed-form ``∫_{-inf}^u K(w) dw``."""
    spec = _as_spec(spec)
    r = spec.radius
    u = np.clip(np.asarray(u, dtype=float), -r, r)
    if spec.family == "gaussian":
        out = (ndtr(u) - ndtr(-r)) / spec._gauss_mass
    elif spec.family == "epanechnikov":
        out = 0.5 + 0.75 * (u - u**3 / 3.0)
    else:
        out = 0.5 * (u + 1.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _check_h(h):
    if not np.isfinite(h) or h <= 0:
        raise InvalidBandwidthError(f"bandwidth must be positive, got {h!r}")


def scaled_kernel(spec, h, u):
    """``K_h(u) = K(u / h) / h``."""
    _check_h(h)
    return kernel_eval(spec, np.asarray(u, dtype=float) / h) / h


def boundary_normalizer(spec, h, v):
    """``∫_0^1 K_h(w - v) dw`` computed from the kernel CDF."""
    _check_h(h)
    v = np.asarray(v, dtype=float)
    return kernel_cdf(spec, (1.0 - v) / h) - kernel_cdf(spec, -v / h)


def boundary_kernel(spec, h, u, v):
    """Boundary-corrected kernel ``K_h(u - v) / ∫_0^1 K_h(w - v) dw`` on ``[0, 1]``.

    For fixed ``v`` this integrates to one over ``u`` in ``[0, 1]``.
    Arguments broadcast against each other.
    """
    _check_h(h)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    norm = np.asarray(boundary_normalizer(spec, h, v))
    if np.any(norm < 1e-12):
        raise DegenerateBandwidthError(
            f"boundary normaliser below 1e-12 for h={h}; bandwidth too small for the support"
        )
    inside = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    out = np.where(inside, scaled_kernel(spec, h, u - v) / norm, 0.0)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=32)
def gauss_legendre(n: int):
    """Cached Gauss-Legendre nodes and weights on ``[-1, 1]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _integrate_support(spec, f, n=256):
    r = _as_spec(spec).radius
    x, w = gauss_legendre(n)
    # split at 0 so odd integrands cancel cleanly
    nodes = np.concatenate([-r / 2 + r / 2 * x, r / 2 + r / 2 * x])
    weights = np.concatenate([w, w]) * (r / 2)
    return float(np.sum(weights * f(nodes)))


@dataclass(frozen=True)
class KernelMoments:
    mu: np.ndarray
    v: np.ndarray
    S: np.ndarray
    S_inv: np.ndarray


def kernel_moments(spec, p: int = 1, max_t: int | None = None) -> KernelMoments:
    """Moments ``μ_t = ∫u^t K`` and ``v_t = ∫u^t K²`` plus the moment matrix ``S``.

    ``S[i, j] = μ_{i+j}`` for ``0 <= i, j <= p``.
    """
    spec = _as_spec(spec)
    if max_t is None:
        max_t = 2 * p + 2
    mu = np.empty(max_t + 1)
    v = np.empty(max_t + 1)
    for t in range(max_t + 1):
        if t % 2:
            mu[t] = v[t] = 0.0
            continue
        mu[t] = _integrate_support(spec, lambda u, t=t: u**t * kernel_eval(spec, u))
        v[t] = _integrate_support(spec, lambda u, t=t: u**t * kernel_eval(spec, u) ** 2)
    idx = np.add.outer(np.arange(p + 1), np.arange(p + 1))
    S = mu[idx]
    return KernelMoments(mu=mu, v=v, S=S, S_inv=np.linalg.inv(S))


def _convolve(spec, l, m, u, n, block=1 << 22):
    # evaluate in blocks of points so memory stays bounded for fine rules
    step = max(1, block // n)
    if u.size > step:
        return np.concatenate([_convolve_block(spec, l, m, u[i:i + step], n)
                               for i in range(0, u.size, step)])
    return _convolve_block(spec, l, m, u, n)


def _convolve_block(spec, l, m, u, n):
    r = spec.radius
    lo = np.maximum(-r, u - r)
    hi = np.minimum(r, u + r)
    width = np.maximum(hi - lo, 0.0)
    x, w = gauss_legendre(n)
    v = (lo + hi)[:, None] / 2 + width[:, None] / 2 * x[None, :]
    a = u[:, None] - v
    integrand = a**l * kernel_eval(spec, a) * v**m * kernel_eval(spec, v)
    return integrand @ w * (width / 2)


def kernel_convolution(spec, l: int, m: int, u, *, tol: float = 1e-9, nodes: int = 256, max_nodes: int = 4096):
    """``(K_l * K_m)(u) = ∫ K_l(u - v) K_m(v) dv`` with ``K_l(x) = x^l K(x)``.

    Gauss-Legendre on the intersection of the two supports; the node count is
    doubled until successive estimates agree to ``tol``.
    """
    spec = _as_spec(spec)
    if not (0 <= l <= 3 and 0 <= m <= 3):
        raise ValueError("power weights l, m must lie in 0..3")
    u_arr = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    prev = _convolve(spec, l, m, u_arr, nodes)
    n = nodes
    while True:
        n *= 2
        cur = _convolve(spec, l, m, u_arr, n)
        if np.max(np.abs(cur - prev), initial=0.0) <= tol:
            break
        if n >= max_nodes:
            raise QuadratureError(f"kernel convolution did not converge with {n} nodes")
        prev = cur
    out = cur.reshape(np.shape(u))
    return float(out) if out.ndim == 0 else out
