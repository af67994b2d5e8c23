"""Regression datasets: container, CSV round-trip, rank check, AR offset."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, MissingColumn, NonNumericCell, RankDeficient, StratPermError

DEFAULT_RANK_TOL = 1e-10


def _frozen(a, ndim):
    a = np.array(a, dtype=np.float64)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome ``y``, regressors of interest ``X`` (n x k), nuisance regressors ``Z`` (n x p).

    The first column of ``Z`` must be the intercept. Arrays are copied and made
    read-only, so a Dataset can be shared between workers.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()
    y_name: str = "y"

    def __post_init__(self):
        y = _frozen(self.y, 1)
        X = _frozen(self.X, 2)
        Z = _frozen(self.Z, 2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        n = y.shape[0]
        if n < 1 or X.shape[1] < 1 or Z.shape[1] < 1:
            raise DimensionMismatch("need n >= 1, k >= 1 and p >= 1")
        if X.shape[0] != n or Z.shape[0] != n:
            raise DimensionMismatch(
                f"row counts differ: y has {n}, X has {X.shape[0]}, Z has {Z.shape[0]}")
        for name, arr in (("y", y), ("X", X), ("Z", Z)):
            if not np.all(np.isfinite(arr)):
                raise StratPermError(f"{name} contains NaN or infinite values")
        if not np.all(Z[:, 0] == 1.0):
            raise StratPermError("first column of Z must be the intercept (all ones)")
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(X.shape[1])))
        if not self.z_names:
            names = ("const",) + tuple(f"z{j}" for j in range(1, Z.shape[1]))
            object.__setattr__(self, "z_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def W(self) -> np.ndarray:
        return np.hstack([self.X, self.Z])

    def with_outcome(self, y) -> "Dataset":
        return Dataset(y, self.X, self.Z, self.x_names, self.z_names, self.y_name)


def validate_rank(d: Dataset, tol: float = DEFAULT_RANK_TOL) -> None:
    """Raise RankDeficient unless W = [X, Z] has numerical rank k + p.

    Singular values below ``tol`` times the largest one count as zero.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    required = d.k + d.p
    sv = np.linalg.svd(d.W, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        raise RankDeficient(0, required)
    rank = int(np.sum(sv > tol * sv[0]))
    if rank < required:
        raise RankDeficient(rank, required)


def ar_offset(y, Y_endog, delta0) -> np.ndarray:
    """Outcome ``y - Y_endog @ delta0`` for an Anderson-Rubin style test.

    Testing that the instrument coefficients are zero in the regression of this
    offset outcome on the instruments and Z tests ``delta = delta0``.
    """
    y = np.asarray(y, dtype=np.float64)
    Y = np.asarray(Y_endog, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    delta0 = np.atleast_1d(np.asarray(delta0, dtype=np.float64))
    if Y.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"Y has {Y.shape[0]} rows but y has {y.shape[0]}")
    if Y.shape[1] != delta0.shape[0]:
        raise DimensionMismatch(f"Y has {Y.shape[1]} columns but delta0 has length {delta0.shape[0]}")
    if not np.any(delta0):
        return y.copy()
    return y - Y @ delta0


def load_csv(path, x_cols, z_cols, y_col, add_intercept=True, rank_tol=DEFAULT_RANK_TOL) -> Dataset:
    """Read a headed CSV into a Dataset and run the rank check.

    With ``add_intercept`` a column of ones is prepended to Z; otherwise the
    first of ``z_cols`` must already be constant one.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    x_cols, z_cols = list(x_cols), list(z_cols)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StratPermError(f"{path} is empty") from None
        index = {}
        for name in [y_col, *x_cols, *z_cols]:
            if name not in header:
                raise MissingColumn(name)
            index[name] = header.index(name)
        rows = []
        for lineno, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            row = {}
            for name, j in index.items():
                cell = record[j].strip() if j < len(record) else ""
                try:
                    value = float(cell)
                except ValueError:
                    raise NonNumericCell(lineno, name, cell) from None
                if not math.isfinite(value):
                    raise NonNumericCell(lineno, name, cell)
                row[name] = value
            rows.append(row)
    if not rows:
        raise StratPermError(f"{path} has no data rows")
    y = np.array([r[y_col] for r in rows])
    X = np.array([[r[c] for c in x_cols] for r in rows]).reshape(len(rows), len(x_cols))
    Z = np.array([[r[c] for c in z_cols] for r in rows]).reshape(len(rows), len(z_cols))
    z_names = tuple(z_cols)
    if add_intercept:
        Z = np.hstack([np.ones((len(rows), 1)), Z])
        z_names = ("const",) + z_names
    elif Z.shape[1] == 0 or not np.all(Z[:, 0] == 1.0):
        raise StratPermError("without add_intercept the first z column must be all ones")
    d = Dataset(y, X, Z, tuple(x_cols), z_names, y_col)
    validate_rank(d, rank_tol)
    return d


def write_csv(d: Dataset, path, include_intercept=False) -> None:
    """Write y, X and Z columns with 17 significant digits (lossless for float64)."""
    z_start = 0 if include_intercept else 1
    names = [d.y_name, *d.x_names, *d.z_names[z_start:]]
    data = np.column_stack([d.y, d.X, d.Z[:, z_start:]])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in data:
            writer.writerow([f"{v:.17g}" for v in row])
