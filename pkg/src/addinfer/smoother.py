"""Integrated local-polynomial smoother matrices.

The smoother for one covariate is

    H = ∫ W_z Z_z (Z_zᵀ W_z Z_z)⁻¹ Z_zᵀ W_z dz,

approximated by a positive-weight quadrature on ``M`` nodes in ``[0, 1]``
(composite 4-point Gauss-Legendre panels by default, or the midpoint rule).
Each node
contributes a rank-``(p+1)`` term, so stacking the whitened local designs
into ``Φ`` (``n × M(p+1)``) gives ``H = Φ Φᵀ``; symmetry and positive
semi-definiteness hold by construction.

Kernel weights are boundary corrected: the weight of observation ``i`` at
node ``z`` is ``K_h(z - x_i)`` divided by the quadrature of the same kernel
over all nodes, so every observation's weights integrate (under the same
rule) to exactly one.  This discrete normalisation makes ``H`` reproduce
polynomials of degree ``<= p`` to rounding error and keeps ``H <= I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BandwidthTooSmallError, InsufficientLocalDataError, InvalidBandwidthError
from .kernel import KernelSpec, boundary_kernel, gauss_legendre, kernel_eval

__all__ = [
    "SmootherConfig",
    "SmootherMatrix",
    "local_poly_fit",
    "build_smoother",
    "smoother_rows",
    "modified_smoother_eigs",
    "midpoint_grid",
    "quadrature_grid",
]

QUADRATURE_RULES = ("gauss-legendre", "midpoint")

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class SmootherConfig:
    p: int = 1
    h: float = 0.2
    kernel: KernelSpec = field(default_factory=KernelSpec)
    grid_size: int = 401
    ridge_tol: float = 1e-8
    quadrature: str = "gauss-legendre"

    def __post_init__(self):
        if self.p not in (0, 1, 2, 3):
            raise ValueError(f"polynomial order must be in 0..3, got {self.p}")
        if not (np.isfinite(self.h) and 0 < self.h):
            raise InvalidBandwidthError(f"bandwidth must be positive, got {self.h!r}")
        if self.quadrature not in QUADRATURE_RULES:
            raise ValueError(f"quadrature must be one of {QUADRATURE_RULES}")
        if self.grid_size < 51 or (self.quadrature == "midpoint" and self.grid_size % 2 == 0):
            raise ValueError("grid_size must be >= 51 (and odd for the midpoint rule)")
        if self.ridge_tol < 0:
            raise ValueError("ridge_tol must be nonnegative")
        if not isinstance(self.kernel, KernelSpec):
            object.__setattr__(self, "kernel", KernelSpec(str(self.kernel)))


@dataclass(frozen=True)
class SmootherMatrix:
    H: np.ndarray
    config: SmootherConfig
    covariate_index: int = 0
    n_ridged: int = 0

    def eigenvalues(self):
        """Eigenvalues of ``H`` sorted in descending order."""
        return np.linalg.eigvalsh(self.H)[::-1]


def midpoint_grid(M: int):
    """Midpoint-rule nodes and spacing on ``[0, 1]``."""
    dz = 1.0 / M
    return (np.arange(M) + 0.5) * dz, dz


def quadrature_grid(M: int, rule: str = "gauss-legendre"):
    """Nodes and (positive) weights on ``[0, 1]`` using at most ``M`` nodes.

    ``'gauss-legendre'`` uses ``M // 4`` equal panels of 4 points each.
    """
    if rule == "midpoint":
        z, dz = midpoint_grid(M)
        return z, np.full(M, dz)
    panels = M // 4
    x, w = gauss_legendre(4)
    half = 0.5 / panels
    mids = (np.arange(panels) + 0.5) / panels
    return (mids[:, None] + half * x).ravel(), np.tile(half * w, panels)


def _node_weights(points, z, q, config):
    """Boundary-corrected weights, shape ``(len(points), M)``."""
    raw = kernel_eval(config.kernel, (z[None, :] - points[:, None]) / config.h) / config.h
    norm = raw @ q
    if np.any(norm <= 0):
        bad = int(np.argmin(norm))
        raise BandwidthTooSmallError(
            f"h={config.h} leaves observation {bad} without any quadrature node in its window; "
            "increase h or grid_size",
            grid_point=float(points[bad]),
        )
    return raw / norm[:, None]


def _local_basis(points, z, h, p):
    # (len(points), M, p+1) with columns ((x - z)/h)^r
    t = (points[:, None] - z[None, :]) / h
    out = np.empty(t.shape + (p + 1,))
    out[..., 0] = 1.0
    for r in range(1, p + 1):
        out[..., r] = out[..., r - 1] * t
    return out


class _LocalFactors:
    """Per-node inverse Cholesky factors of the local Gram matrices."""

    def __init__(self, x, config):
        self.config = config
        self.x = np.asarray(x, dtype=float)
        self.z, self.q = quadrature_grid(config.grid_size, config.quadrature)
        p = config.p
        self.w = _node_weights(self.x, self.z, self.q, config)
        self.basis = _local_basis(self.x, self.z, config.h, p)
        # batched over nodes: (M, p+1, n) @ (M, n, p+1)
        wb = (self.w[..., None] * self.basis).transpose(1, 2, 0)
        gram = np.matmul(wb, self.basis.transpose(1, 0, 2))
        tr = np.trace(gram, axis1=1, axis2=2)
        self.active = tr > 0
        eig = np.linalg.eigvalsh(gram[self.active])
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = eig[:, -1] / np.maximum(eig[:, 0], 0.0)
        needs = np.zeros(len(self.z), dtype=bool)
        needs[np.flatnonzero(self.active)[~(cond < _COND_LIMIT)]] = True
        self.n_ridged = int(needs.sum())
        if self.n_ridged:
            ridge = config.ridge_tol * tr[needs] / (p + 1)
            gram[needs] += ridge[:, None, None] * np.eye(p + 1)
        self.linv = np.zeros_like(gram)
        try:
            chol = np.linalg.cholesky(gram[self.active])
        except np.linalg.LinAlgError:
            for k in np.flatnonzero(self.active):
                try:
                    np.linalg.cholesky(gram[k])
                except np.linalg.LinAlgError:
                    raise BandwidthTooSmallError(
                        f"local system at grid point z={self.z[k]:.6g} is singular for h={config.h}",
                        grid_point=float(self.z[k]),
                    ) from None
            raise
        self.linv[self.active] = np.linalg.inv(chol)

    def phi(self, points=None):
        """Whitened, weighted local designs stacked to ``(len(points), M*(p+1))``."""
        if points is None:
            w, basis = self.w, self.basis
        else:
            points = np.asarray(points, dtype=float)
            w = _node_weights(points, self.z, self.q, self.config)
            basis = _local_basis(points, self.z, self.config.h, self.config.p)
        # Φ[i, m, :] = sqrt(q_m) w_im L_m^{-1} ζ_im
        phi = np.matmul(basis.transpose(1, 0, 2), self.linv.transpose(0, 2, 1)).transpose(1, 0, 2)
        phi *= (np.sqrt(self.q) * w)[..., None]
        return phi.reshape(phi.shape[0], -1)


def build_smoother(x, config: SmootherConfig, covariate_index: int = 0) -> SmootherMatrix:
    """Build the dense ``n × n`` smoother for covariate values ``x`` in ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be one-dimensional")
    if len(x) < config.p + 2:
        raise ValueError(f"need at least p+2={config.p + 2} observations, got {len(x)}")
    if np.any((x < 0) | (x > 1)):
        raise ValueError("covariate values must be scaled to [0, 1]")
    fac = _LocalFactors(x, config)
    phi = fac.phi()
    H = phi @ phi.T
    H = 0.5 * (H + H.T)
    return SmootherMatrix(H=H, config=config, covariate_index=covariate_index, n_ridged=fac.n_ridged)


def smoother_rows(x, x_new, config: SmootherConfig):
    """Rows of the smoother evaluated at new points: fitted(x_new) = R @ y."""
    fac = _LocalFactors(x, config)
    x_new = np.clip(np.asarray(x_new, dtype=float), 0.0, 1.0)
    return fac.phi(x_new) @ fac.phi().T


def local_poly_fit(x, y, z, p=1, h=0.2, kernel=None, weights=None):
    """Weighted local polynomial fit at ``z``.

    Returns ``β̂`` in the basis ``(x - z)^r``, so ``β̂_r`` estimates
    ``m^(r)(z) / r!``.  Default weights are the boundary-corrected kernel
    ``K_h(z - x_i) / ∫_0^1 K_h(w - x_i) dw``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights is None:
        weights = boundary_kernel(kernel or KernelSpec(), h, z, x)
    weights = np.asarray(weights, dtype=float)
    if np.count_nonzero(weights > 0) < p + 1:
        raise InsufficientLocalDataError(
            f"fewer than p+1={p + 1} observations carry kernel weight at z={z}"
        )
    t = (x - z) / h
    Z = t[:, None] ** np.arange(p + 1)
    sw = np.sqrt(weights)
    coef, _, rank, _ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
    if rank < p + 1:
        raise InsufficientLocalDataError(f"weighted local design at z={z} has rank {rank} < {p + 1}")
    return coef / h ** np.arange(p + 1)


def modified_smoother_eigs(H, G_j):
    """Eigenvalues of ``H - G_j`` sorted in descending order."""
    H = H.H if isinstance(H, SmootherMatrix) else np.asarray(H)
    return np.linalg.eigvalsh(H - G_j)[::-1]
