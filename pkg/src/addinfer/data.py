"""Response/covariate container with per-covariate affine maps to [0, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateDesignError

__all__ = ["Dataset", "read_csv"]


@dataclass(frozen=True)
class Dataset:
    """Observed data; covariates keep their raw scale and expose a scaled view.

    ``scaled = (X - lo) / span`` maps each covariate onto ``[0, 1]`` using the
    observed minimum and range.
    """

    y: np.ndarray
    X: np.ndarray
    names: tuple = ()
    response_name: str = "y"
    lo: np.ndarray = field(default=None)
    span: np.ndarray = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("data contain missing or non-finite values")
        lo = X.min(axis=0) if self.lo is None else np.asarray(self.lo, dtype=float)
        span = X.max(axis=0) - lo if self.span is None else np.asarray(self.span, dtype=float)
        if np.any(span <= 0):
            bad = [int(j) for j in np.flatnonzero(span <= 0)]
            raise DegenerateDesignError(f"covariate column(s) {bad} are constant")
        names = tuple(self.names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "span", span)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def scaled(self) -> np.ndarray:
        return np.clip((self.X - self.lo) / self.span, 0.0, 1.0)

    def to_scaled(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.lo) / self.span

    def with_response(self, y) -> "Dataset":
        return Dataset(y=y, X=self.X, names=self.names, response_name=self.response_name,
                       lo=self.lo, span=self.span)

    def subset(self, rows) -> "Dataset":
        return Dataset(y=self.y[rows], X=self.X[rows], names=self.names,
                       response_name=self.response_name)


def read_csv(path, response: str, covariates=None) -> Dataset:
    """Read an RFC-4180 CSV with a header row.

    Raises ``ValueError`` naming the offending row/column for missing or
    non-numeric cells (row numbers count the header as row 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if covariates is None:
        covariates = [h for h in header if h != response]
    missing = [c for c in [response, *covariates] if c not in header]
    if missing:
        raise ValueError(f"{path}: columns not found: {missing}")
    cols = [header.index(c) for c in [response, *covariates]]
    values = np.empty((len(rows), len(cols)))
    empty_rows = []
    for r, row in enumerate(rows, start=2):
        if not any(cell.strip() for cell in row):
            raise ValueError(f"{path}: blank line at row {r}")
        for k, c in enumerate(cols):
            cell = row[c].strip() if c < len(row) else ""
            if cell == "" or cell.lower() in {"na", "nan"}:
                empty_rows.append(r)
                values[r - 2, k] = np.nan
                continue
            try:
                values[r - 2, k] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric value {cell!r} at row {r}, column {header[c]!r}"
                ) from None
    if empty_rows:
        raise ValueError(f"{path}: missing values in rows {sorted(set(empty_rows))}")
    return Dataset(y=values[:, 0], X=values[:, 1:], names=tuple(covariates), response_name=response)
