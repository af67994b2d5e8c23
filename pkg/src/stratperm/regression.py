"""Linear-algebra kernels: within-stratum demeaning and pivoted-QR least squares."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import DimensionMismatch, RankDeficient
from .strata import StrataPartition

OLS_RANK_TOL = 1e-10
# Strata larger than this get an exactly rounded mean (math.fsum).
_COMPENSATED_MIN = 10_000


def _stratum_means(v, p: StrataPartition):
    if v.ndim == 1:
        sums = np.bincount(p.assignment, weights=v, minlength=p.S)
    else:
        sums = np.column_stack([np.bincount(p.assignment, weights=v[:, j], minlength=p.S)
                                for j in range(v.shape[1])])
    big = np.flatnonzero(p.sizes > _COMPENSATED_MIN)
    if big.size:
        blocks = p.blocks()
        for s in big:
            rows = blocks[s]
            if v.ndim == 1:
                sums[s] = math.fsum(v[rows])
            else:
                sums[s] = [math.fsum(col) for col in v[rows].T]
    return sums / p.sizes.reshape((-1,) + (1,) * (v.ndim - 1))


def within_demean(v, p: StrataPartition) -> np.ndarray:
    """Subtract each stratum's mean (the operator D). Works column-wise on 2-d input."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != p.n:
        raise DimensionMismatch(f"vector has length {v.shape[0]}, partition covers {p.n} rows")
    out = v - _stratum_means(v, p)[p.assignment]
    # singleton strata are exactly zero after demeaning
    single = p.sizes[p.assignment] == 1
    if np.any(single):
        out[single] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class DemeanedDesign:
    """Within-stratum demeaned regressors of interest and their Gram matrix."""

    x_tilde: np.ndarray
    partition: StrataPartition
    gram: np.ndarray

    @property
    def k(self) -> int:
        return self.x_tilde.shape[1]


def demean_design(d, p: StrataPartition) -> DemeanedDesign:
    X = d.X if hasattr(d, "X") else np.asarray(d, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    xt = within_demean(X, p)
    xt.setflags(write=False)
    gram = xt.T @ xt
    gram.setflags(write=False)
    return DemeanedDesign(xt, p, gram)


class OLSFit(NamedTuple):
    coef: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    leverage: np.ndarray


def ols(response, design, tol: float = OLS_RANK_TOL) -> OLSFit:
    """Least squares via column-pivoted QR; raises RankDeficient on a rank-deficient design."""
    y = np.asarray(response, dtype=np.float64)
    A = np.asarray(design, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design has {A.shape[0]} rows, response {y.shape[0]}")
    m = A.shape[1]
    if A.shape[0] < m:
        raise RankDeficient(A.shape[0], m)
    Q, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise RankDeficient(0, m)
    rank = int(np.sum(diag > tol * diag[0]))
    if rank < m:
        raise RankDeficient(rank, m)
    z = solve_triangular(R, Q.T @ y)
    coef = np.empty(m)
    coef[piv] = z
    fitted = A @ coef
    leverage = np.einsum("ij,ij->i", Q, Q)
    return OLSFit(coef, y - fitted, fitted, leverage)


def residualize(v, Z, tol: float = OLS_RANK_TOL) -> np.ndarray:
    """M_Z v for a vector or the columns of a matrix."""
    Q, R, _ = qr(np.asarray(Z, dtype=np.float64), mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0]))
    if rank < Z.shape[1]:
        raise RankDeficient(rank, Z.shape[1])
    v = np.asarray(v, dtype=np.float64)
    return v - Q @ (Q.T @ v)
