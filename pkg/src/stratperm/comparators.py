"""Reference tests: partial-correlation permutation (PC), HC0/HC1/HC3 Wald, classical F."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from . import __version__
from .dataset import Dataset, validate_rank
from .distributions import chi2_quantile, chi2_sf, f_ppf, f_sf
from .errors import DimensionMismatch, DomainError, LeverageOne, RankDeficient
from .regression import ols, residualize
from .sr import (
    LinearProfile,
    _block_ranges,
    _check_alpha,
    _check_beta0,
    _quadratic_forms,
    _run_blocks,
    permutation_p_value,
    phi_alpha,
)
from .strata import _enumerate, partition_from_labels, random_permutations

HC_FLAVORS = ("HC0", "HC1", "HC3")
PC_NOTE = ("Freedman-Lane residual permutation: y - X beta0 residualized on Z, residuals "
           "permuted over all n rows, robust Wald form on the residual-on-residual regression")


@dataclass
class ComparatorResult:
    method: str
    statistic: float
    critical: float
    p_value: float
    decision: str
    alpha: float
    beta0: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"

    def to_dict(self) -> dict:
        return {
            "tool_version": __version__,
            "method": self.method,
            "statistic": float(self.statistic),
            "critical": float(self.critical),
            "p_value": float(self.p_value),
            "decision": self.decision,
            "rejected": self.rejected,
            "alpha": float(self.alpha),
            "beta0": [float(b) for b in np.atleast_1d(self.beta0)],
            **self.extra,
        }


def _decision(p_value, alpha):
    return "reject" if p_value <= alpha else "accept"


# -- PC --------------------------------------------------------------------------------

def _z_basis(Z):
    Q, R, _ = qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank < Z.shape[1]:
        raise RankDeficient(rank, Z.shape[1])
    return Q


def pc_permutations(n: int, n_draws: int, seed: int, enumerate_small: bool = True) -> np.ndarray:
    """Identity followed by unrestricted permutations of the n rows.

    All n! permutations when that is at most ``n_draws + 1`` (and enumeration is
    allowed); otherwise ``n_draws`` uniform draws with replacement.
    """
    single = partition_from_labels(np.zeros(n, dtype=np.int64))
    if enumerate_small and n <= 8 and math.factorial(n) <= n_draws + 1:
        return _enumerate(single, np.arange(math.factorial(n)))
    ident = np.arange(n, dtype=np.int32)[None, :]
    return np.vstack([ident, random_permutations(single, n_draws, seed)])


def _pc_stats(Q, xr, e, perms, workers):
    k = xr.shape[1]
    pairs = (xr[:, :, None] * xr[:, None, :]).reshape(xr.shape[0], k * k)

    def job(r):
        E = e[perms[r[0]:r[1]]]
        G = E - (E @ Q) @ Q.T
        A = G @ xr
        B = ((G * G) @ pairs).reshape(-1, k, k)
        return _quadratic_forms(A, B)

    parts = _run_blocks(job, _block_ranges(perms.shape[0], perms.shape[1]), workers)
    return np.concatenate([s for s, _ in parts])


def pc_test(d: Dataset, beta0, alpha: float = 0.05, n_draws: int = 499, seed: int = 0,
            enumerate_small: bool = True, workers: int = 1) -> ComparatorResult:
    """Partial-correlation permutation test in Freedman-Lane form.

    The null residuals e = M_Z (y - X beta0) are permuted over all rows, the
    pseudo-outcomes are re-residualized on Z, and each replica is scored with
    the robust Wald form against X residualized on Z. The p-value is the
    add-one permutation p-value.
    """
    beta0 = _check_beta0(d, beta0)
    _check_alpha(alpha)
    validate_rank(d)
    Q = _z_basis(d.Z)
    xr = d.X - Q @ (Q.T @ d.X)
    v = d.y - d.X @ beta0
    e = v - Q @ (Q.T @ v)
    perms = pc_permutations(d.n, n_draws, seed, enumerate_small)
    stats = _pc_stats(Q, xr, e, perms, workers)
    p_value = permutation_p_value(stats)
    crit = phi_alpha(stats, alpha).critical
    return ComparatorResult("PC", float(stats[0]), crit, p_value, _decision(p_value, alpha), alpha,
                            beta0, {"N": int(stats.shape[0]), "seed": seed, "algorithm": PC_NOTE})


def pc_linear_profile(d: Dataset, perms: np.ndarray, workers: int = 1) -> LinearProfile:
    if d.k != 1:
        raise DimensionMismatch("linear profiles need a scalar interest coefficient")
    Q = _z_basis(d.Z)
    xr = d.X[:, 0] - Q @ (Q.T @ d.X[:, 0])
    ey = d.y - Q @ (Q.T @ d.y)

    def job(r):
        Ey = ey[perms[r[0]:r[1]]]
        Ex = xr[perms[r[0]:r[1]]]
        return Ey - (Ey @ Q) @ Q.T, Ex - (Ex @ Q) @ Q.T

    ranges = _block_ranges(perms.shape[0], perms.shape[1])
    return LinearProfile(xr, (job(r) for r in ranges))


# -- sandwich Wald -------------------------------------------------------------------------

def _need_dof(d):
    if d.n <= d.k + d.p:
        raise DomainError(f"need n > k + p (n={d.n}, k + p={d.k + d.p})")


def sandwich_cov(d: Dataset, flavor: str = "HC1"):
    """OLS coefficients of y on [X, Z] and their sandwich covariance."""
    flavor = flavor.upper()
    if flavor not in HC_FLAVORS:
        raise ValueError(f"flavor must be one of {HC_FLAVORS}")
    _need_dof(d)
    W = d.W
    fit = ols(d.y, W)
    n, m = W.shape
    if flavor == "HC0":
        omega = fit.residuals ** 2
    elif flavor == "HC1":
        omega = fit.residuals ** 2 * (n / (n - m))
    else:
        if np.any(fit.leverage >= 1.0 - 1e-10):
            raise LeverageOne("some observation has leverage 1; HC3 is undefined")
        omega = (fit.residuals / (1.0 - fit.leverage)) ** 2
    _, R, piv = qr(W, mode="economic", pivoting=True)
    Rinv = solve_triangular(R, np.eye(m))
    bread_p = Rinv @ Rinv.T
    bread = np.empty_like(bread_p)
    bread[np.ix_(piv, piv)] = bread_p
    meat = (W * omega[:, None]).T @ W
    return fit.coef, bread @ meat @ bread


def hc_wald(d: Dataset, beta0, alpha: float = 0.05, flavor: str = "HC1") -> ComparatorResult:
    """Robust Wald test of beta = beta0 with the chi-square(k) critical value."""
    beta0 = _check_beta0(d, beta0)
    _check_alpha(alpha)
    coef, cov = sandwich_cov(d, flavor)
    diff = coef[:d.k] - beta0
    V = cov[:d.k, :d.k]
    stat = float(diff @ np.linalg.solve(V, diff))
    crit = chi2_quantile(1.0 - alpha, d.k)
    p_value = chi2_sf(stat, d.k)
    return ComparatorResult(flavor.upper(), stat, crit, p_value, _decision(p_value, alpha), alpha, beta0)


# -- classical F ------------------------------------------------------------------------------

def f_test(d: Dataset, beta0, alpha: float = 0.05) -> ComparatorResult:
    """Non-robust F test of beta = beta0 with (k, n - k - p) degrees of freedom."""
    beta0 = _check_beta0(d, beta0)
    _check_alpha(alpha)
    _need_dof(d)
    fit = ols(d.y, d.W)
    dof2 = d.n - d.k - d.p
    s2 = float(fit.residuals @ fit.residuals) / dof2
    xr = residualize(d.X, d.Z)
    diff = fit.coef[:d.k] - beta0
    stat = max(0.0, float(diff @ (xr.T @ xr) @ diff) / d.k / s2)
    crit = f_ppf(1.0 - alpha, d.k, dof2)
    p_value = f_sf(stat, d.k, dof2)
    return ComparatorResult("N-R", stat, crit, p_value, _decision(p_value, alpha), alpha, beta0,
                            {"dof": [d.k, dof2]})
