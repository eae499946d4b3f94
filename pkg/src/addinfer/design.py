"""Polynomial design matrices and the orthogonal projections built from them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDesignError

__all__ = [
    "ConcurvityWarning",
    "DesignSet",
    "ProjectionSet",
    "build_design",
    "projection",
    "orthonormal_basis",
    "build_projections",
]

RANK_TOL = 1e-10


class ConcurvityWarning(UserWarning):
    """The polynomial eigenspaces of the component smoothers are linearly dependent."""


@dataclass(frozen=True)
class DesignSet:
    """Columns ordered ``[1, x_1..x_d, x_1²..x_d², ...]``; a covariate contributes
    ``x_j^k`` only while ``k <= p_j``.
    """

    X_full: np.ndarray
    X_j: tuple
    X_minus_d: np.ndarray
    col_owner: np.ndarray  # covariate index per column, -1 for the intercept
    col_power: np.ndarray
    p: tuple
    tested: tuple
    rank_tol: float = RANK_TOL

    @property
    def concurvity(self) -> bool:
        return np.linalg.matrix_rank(self.X_full) < self.X_full.shape[1]


def build_design(Xs, p, tested=(), *, null_degree=None, rank_tol=RANK_TOL) -> DesignSet:
    """Design blocks for scaled covariates ``Xs`` (``n × d``) and orders ``p``.

    ``tested`` lists covariates removed from ``X_minus_d``; with
    ``null_degree = k`` their powers up to ``k`` are kept instead (composite
    polynomial null).
    """
    Xs = np.asarray(Xs, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs[:, None]
    n, d = Xs.shape
    p = tuple(int(v) for v in np.broadcast_to(p, (d,)))
    if any(v not in (0, 1, 2, 3) for v in p):
        raise ValueError(f"polynomial orders must lie in 0..3, got {p}")
    if n <= 1 + sum(p):
        raise ValueError(f"need n > 1 + sum(p) = {1 + sum(p)} observations, got {n}")
    if np.any(np.ptp(Xs, axis=0) == 0):
        raise DegenerateDesignError("a covariate column is constant and duplicates the intercept")
    tested = tuple(sorted(int(t) for t in np.atleast_1d(tested)))
    cols, owner, power = [np.ones(n)], [-1], [0]
    for k in range(1, max(p, default=0) + 1):
        for j in range(d):
            if k <= p[j]:
                cols.append(Xs[:, j] ** k)
                owner.append(j)
                power.append(k)
    X_full = np.column_stack(cols)
    owner = np.array(owner)
    power = np.array(power)
    blocks = tuple(Xs[:, j : j + 1] ** np.arange(p[j] + 1) for j in range(d))
    keep = ~np.isin(owner, tested)
    if null_degree is not None:
        keep |= np.isin(owner, tested) & (power <= null_degree)
    X_minus = X_full[:, keep]
    if null_degree is not None:
        # tested covariates may have p_d < null_degree; add the missing powers
        extra = [Xs[:, t] ** k for t in tested for k in range(p[t] + 1, null_degree + 1)]
        if extra:
            X_minus = np.column_stack([X_minus, *extra])
    return DesignSet(X_full=X_full, X_j=blocks, X_minus_d=X_minus, col_owner=owner,
                     col_power=power, p=p, tested=tested, rank_tol=rank_tol)


def orthonormal_basis(A, rank_tol=RANK_TOL):
    """Orthonormal basis of the numerical column space of ``A`` (SVD cutoff)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((A.shape[0], 0))
    return U[:, s > rank_tol * s[0]]


def projection(A, rank_tol=RANK_TOL):
    """Orthogonal projector onto the column span of ``A``."""
    Q = orthonormal_basis(A, rank_tol)
    return Q @ Q.T


@dataclass(frozen=True)
class ProjectionSet:
    G: np.ndarray
    G_j: tuple
    G_minus_d: np.ndarray
    P_resid_d: np.ndarray
    P_1: np.ndarray
    rank: int
    expected_rank: int

    @property
    def concurvity(self) -> bool:
        return self.rank < self.expected_rank


def build_projections(ds: DesignSet, *, check=True) -> ProjectionSet:
    """All projections used by the fit and the test matrices.

    ``G = P_1 + P_{P_1⊥ 𝕏^[-0]}`` and ``G = G_[-d] + P_{G_[-d]⊥ 𝕏_d^[-0]}``
    are verified when ``check`` is true.
    """
    n = ds.X_full.shape[0]
    tol = ds.rank_tol
    Q = orthonormal_basis(ds.X_full, tol)
    G = Q @ Q.T
    G_j = tuple(projection(B, tol) for B in ds.X_j)
    G_minus = projection(ds.X_minus_d, tol)
    tested_cols = ds.X_full[:, np.isin(ds.col_owner, ds.tested)]
    P_resid = projection(tested_cols - G_minus @ tested_cols, tol) if tested_cols.size else np.zeros((n, n))
    P_1 = np.full((n, n), 1.0 / n)
    rank, expected = Q.shape[1], ds.X_full.shape[1]
    if rank < expected:
        warnings.warn(
            f"exact concurvity: polynomial design has rank {rank} < {expected}; "
            "the additive decomposition is not unique",
            ConcurvityWarning,
            stacklevel=2,
        )
    if check:
        centered = ds.X_full[:, 1:] - ds.X_full[:, 1:].mean(axis=0)
        alt = P_1 + projection(centered, tol) if centered.shape[1] else P_1
        if np.max(np.abs(alt - G)) > 1e-8:
            raise DegenerateDesignError("projection decomposition G = P_1 + P_(P_1⊥X) failed")
        nested = np.max(np.abs(ds.X_minus_d - G @ ds.X_minus_d), initial=0.0) < 1e-8
        if ds.tested and nested and np.max(np.abs(G_minus + P_resid - G)) > 1e-8:
            raise DegenerateDesignError("projection decomposition G = G_[-d] + P_resid failed")
    return ProjectionSet(G=G, G_j=G_j, G_minus_d=G_minus, P_resid_d=P_resid, P_1=P_1,
                         rank=rank, expected_rank=expected)

