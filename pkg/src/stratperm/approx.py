"""Approximate SR test: strata from an equal-width binning of the fitted index Z @ gamma_hat."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, validate_rank
from .regression import ols
from .sr import TestResult, sr_test
from .strata import StrataPartition, partition_from_labels


@dataclass(frozen=True, eq=False)
class IndexDiscretization:
    s_bins: int
    edges: np.ndarray
    bin_of: np.ndarray
    degenerate: bool = False

    def to_dict(self):
        return {
            "s_bins": int(self.s_bins),
            "edges": [float(e) for e in self.edges],
            "degenerate": bool(self.degenerate),
            "occupied_bins": int(np.unique(self.bin_of).size),
        }


def fitted_index(d: Dataset):
    """Z @ gamma_hat from the OLS fit of y on [X, Z]."""
    fit = ols(d.y, d.W)
    return d.Z @ fit.coef[d.k:]


def index_correlation(d: Dataset, index=None) -> float:
    """Largest absolute sample correlation between a column of X and the fitted index."""
    index = fitted_index(d) if index is None else np.asarray(index)
    ic = index - index.mean()
    sd_i = math.sqrt(float(ic @ ic))
    if sd_i == 0:
        return 0.0
    best = 0.0
    for j in range(d.k):
        xc = d.X[:, j] - d.X[:, j].mean()
        sd_x = math.sqrt(float(xc @ xc))
        if sd_x > 0:
            best = max(best, abs(float(xc @ ic)) / (sd_x * sd_i))
    return min(best, 1.0)


def s_from_correlation(n: int, corr: float, rounding: str = "floor") -> int:
    """Number of strata n / min(sqrt(n), 1 + 2/|corr|), rounded down by default."""
    denom = math.sqrt(n) if corr == 0 else min(math.sqrt(n), 1.0 + 2.0 / abs(corr))
    ratio = n / denom
    if rounding == "floor":
        s = math.floor(ratio + 1e-12)
    elif rounding == "ceil":
        s = math.ceil(ratio - 1e-12)
    else:
        raise ValueError("rounding must be 'floor' or 'ceil'")
    return int(min(max(s, 1), n))


def data_driven_s(d: Dataset, rounding: str = "floor") -> int:
    if d.n < 2:
        raise ValueError("need at least two observations")
    return s_from_correlation(d.n, index_correlation(d), rounding)


def discretize_index(index, s_bins: int) -> IndexDiscretization:
    """Equal-width bins between the smallest and largest index value.

    Bins are half-open [u_s, u_{s+1}) except the last, which also holds the maximum.
    """
    index = np.asarray(index, dtype=np.float64)
    s_bins = int(s_bins)
    if s_bins < 1:
        raise ValueError("s_bins must be positive")
    lo, hi = float(index.min()), float(index.max())
    if hi == lo:
        return IndexDiscretization(1, np.array([lo, hi]), np.zeros(index.shape[0], dtype=np.int64), True)
    edges = lo + (hi - lo) * np.arange(s_bins + 1) / s_bins
    edges[-1] = hi
    t = (index - lo) / (hi - lo)
    bins = np.minimum(np.floor(t * s_bins).astype(np.int64), s_bins - 1)
    return IndexDiscretization(s_bins, edges, bins, False)


def approx_partition(d: Dataset, s_bins: int | None = None, rounding: str = "floor"):
    """Partition induced by binning the fitted index, plus audit info."""
    index = fitted_index(d)
    corr = index_correlation(d, index)
    s = s_from_correlation(d.n, corr, rounding) if s_bins is None else int(s_bins)
    disc = discretize_index(index, s)
    part: StrataPartition = partition_from_labels(disc.bin_of)
    info = {"discretization": disc.to_dict(), "index_correlation": corr,
            "s_rule": "data-driven" if s_bins is None else "user", "s_rounding": rounding}
    return part, disc, info


def approx_sr_test(d: Dataset, beta0, alpha: float = 0.05, s_bins: int | None = None,
                   n_prime: int = 499, seed: int = 0, randomization_u: float | None = None,
                   conservative: bool = False, workers: int = 1, rounding: str = "floor") -> TestResult:
    """SR test on strata built from the binned index; not exact in general."""
    validate_rank(d)
    part, _, info = approx_partition(d, s_bins, rounding)
    res = sr_test(d, beta0, alpha, n_prime, seed, randomization_u, conservative, workers,
                  partition=part, method="ApproxSR", check_rank=False)
    res.approximate = True
    res.extra.update(info)
    return res
