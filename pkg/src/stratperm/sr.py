"""The stratified randomization (SR) test and its chi-square (SRa) variant."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import __version__
from .dataset import Dataset, validate_rank
from .distributions import chi2_quantile, chi2_sf
from .errors import DegenerateStatistic, DimensionMismatch, DomainError
from .regression import DemeanedDesign, demean_design, within_demean
from .strata import (
    PermutationSet,
    StrataPartition,
    diagnostics,
    partition_by_z,
    randomization_uniform,
    sample_permutation_set,
)

__all__ = [
    "TestResult",
    "PhiResult",
    "wald_statistic",
    "permuted_statistics",
    "phi_alpha",
    "decide",
    "sr_test",
    "sra_test",
    "chi2_quantile",
    "LinearProfile",
]

# Relative eigenvalue cutoff below which the k x k covariance is treated as singular.
GINV_TOL = 1e-12
# Upper bound on elements per gathered block of permuted vectors.
_BLOCK_ELEMENTS = 4_000_000


@dataclass
class TestResult:
    """Outcome of one SR-family test of H0: beta = beta0.

    ``permuted[0]`` is the observed statistic. ``p_value`` is the add-one
    permutation p-value, a reporting convenience next to the randomized
    test function ``phi``.
    """

    __test__ = False  # keep pytest from collecting this class

    method: str
    statistic: float
    permuted: np.ndarray
    critical: float
    phi: float
    decision: str
    rejected: bool
    u: float | None
    p_value: float
    alpha: float
    beta0: np.ndarray
    q: int = 0
    n_plus: int = 0
    n_zero: int = 0
    used_generalized_inverse: bool = False
    trivial: bool = False
    approximate: bool = False
    conservative: bool = False
    seed: int | None = None
    n_prime: int | None = None
    enumerated: bool = False
    diagnostics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return int(len(self.permuted))

    def to_dict(self, max_permuted: int | None = None) -> dict:
        perm = np.asarray(self.permuted, dtype=float)
        truncated = max_permuted is not None and perm.size > max_permuted
        if truncated:
            perm = perm[:max_permuted]
        return {
            "tool_version": __version__,
            "method": self.method,
            "statistic": float(self.statistic),
            "critical": float(self.critical),
            "phi": float(self.phi),
            "decision": self.decision,
            "rejected": bool(self.rejected),
            "u": None if self.u is None else float(self.u),
            "p_value": float(self.p_value),
            "alpha": float(self.alpha),
            "beta0": [float(b) for b in np.atleast_1d(self.beta0)],
            "N": self.N,
            "q": int(self.q),
            "n_plus": int(self.n_plus),
            "n_zero": int(self.n_zero),
            "used_generalized_inverse": bool(self.used_generalized_inverse),
            "trivial": bool(self.trivial),
            "approximate": bool(self.approximate),
            "conservative": bool(self.conservative),
            "seed": self.seed,
            "n_prime": self.n_prime,
            "enumerated": bool(self.enumerated),
            "permuted": perm.tolist(),
            "permuted_truncated": bool(truncated),
            "p_value_convention": "add-one permutation p-value (1 + #{j>=1: W_j >= W}) / N",
            "diagnostics": self.diagnostics,
            **self.extra,
        }


# -- statistic kernels --------------------------------------------------------------

def _quadratic_forms(A, B):
    """a' B^+ a for stacks a = A[j] (k,), B[j] (k, k); returns (values, ginv_used)."""
    k = A.shape[1]
    if k == 1:
        a = A[:, 0]
        b = B[:, 0, 0]
        ok = b > 0
        out = np.zeros_like(a)
        np.divide(a * a, b, out=out, where=ok)
        return out, bool(not np.all(ok))
    w, Q = np.linalg.eigh(B)
    proj = np.einsum("mki,mk->mi", Q, A)
    wmax = w.max(axis=1, keepdims=True)
    keep = (w > GINV_TOL * wmax) & (w > 0)
    safe = np.where(keep, w, 1.0)
    out = np.where(keep, proj * proj / safe, 0.0).sum(axis=1)
    return out, bool(not np.all(keep))


def _active_rows(p: StrataPartition):
    return np.flatnonzero(p.sizes[p.assignment] > 1)


def _row_dots(V, M):
    """V @ M computed as per-row sums of a C-contiguous product.

    Each row is reduced by the same pairwise summation wherever it sits in the
    block, so identical permuted vectors give bit-identical statistics (BLAS
    and einsum kernels round differently depending on block shape).
    """
    M = M.reshape(M.shape[0], -1)
    out = np.empty((V.shape[0], M.shape[1]))
    for c in range(M.shape[1]):
        out[:, c] = (V * M[:, c]).sum(axis=1)
    return out


def _stats_block(xt_act, vt, cols):
    """Statistics for permuted demeaned outcomes ``vt[cols[j]]`` (rows restricted to active strata)."""
    V = vt[np.ascontiguousarray(cols)]  # column-gathered index arrays come out F-ordered
    A = _row_dots(V, xt_act)
    k = xt_act.shape[1]
    pairs = (xt_act[:, :, None] * xt_act[:, None, :]).reshape(xt_act.shape[0], k * k)
    B = _row_dots(V * V, pairs).reshape(-1, k, k)
    return _quadratic_forms(A, B)


def _block_ranges(m, width):
    step = max(1, _BLOCK_ELEMENTS // max(1, width))
    return [(s, min(m, s + step)) for s in range(0, m, step)]


def _run_blocks(fn, ranges, workers):
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, ranges))
    return [fn(r) for r in ranges]


def wald_statistic(xt: DemeanedDesign, v, p: StrataPartition | None = None) -> float:
    """Robust Wald form v'X~ (X~' diag((Dv)^2) X~)^+ X~'v."""
    return _observed(xt, v, p)[0]


def _observed(xt, v, p):
    p = xt.partition if p is None else p
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != p.n:
        raise DimensionMismatch(f"v has length {v.shape[0]}, design has {p.n} rows")
    vt = within_demean(v, p)
    act = _active_rows(p)
    xt_act = np.ascontiguousarray(xt.x_tilde[act])
    # B = 0 forces a = x~'Dv = 0 as well
    if not np.any(xt_act * vt[act][:, None]):
        raise DegenerateStatistic(
            "score and covariance are identically zero (all-singleton strata or v constant within strata)")
    stat, ginv = _stats_block(xt_act, vt, act[None, :])
    return float(stat[0]), ginv


def permuted_statistics(xt: DemeanedDesign, v, perms, p: StrataPartition | None = None,
                        workers: int = 1, return_flag: bool = False):
    """g(W, v_pi) for every permutation in ``perms`` (row 0 is the identity).

    D v is computed once and permuted within strata, which is valid because
    D(v_pi) = (Dv)_pi for stratified pi.
    """
    p = xt.partition if p is None else p
    _observed(xt, v, p)  # degeneracy check on the identity
    vt = within_demean(np.asarray(v, dtype=np.float64), p)
    P = perms.perms if isinstance(perms, PermutationSet) else np.asarray(perms)
    act = _active_rows(p)
    xt_act = np.ascontiguousarray(xt.x_tilde[act])
    cols_all = np.ascontiguousarray(P[:, act])

    def job(r):
        return _stats_block(xt_act, vt, cols_all[r[0]:r[1]])

    parts = _run_blocks(job, _block_ranges(P.shape[0], act.size), workers)
    stats = np.concatenate([s for s, _ in parts])
    ginv = any(g for _, g in parts)
    return (stats, ginv) if return_flag else stats


class PhiResult(NamedTuple):
    phi: float
    critical: float
    q: int
    n_plus: int
    n_zero: int


def _floor_n_alpha(N, alpha):
    return math.floor(N * Fraction(repr(float(alpha))))


def phi_alpha(stats, alpha: float) -> PhiResult:
    """Randomized level-alpha test function of the observed statistic ``stats[0]``.

    q = N - floor(N alpha); reject (phi = 1) above the q-th order statistic,
    randomize with (N alpha - N+) / N0 at a tie, accept below. Ties use exact
    floating-point equality.
    """
    stats = np.asarray(stats, dtype=np.float64)
    N = stats.shape[0]
    if N < 1:
        raise ValueError("need at least one statistic")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    q = N - _floor_n_alpha(N, alpha)
    crit = float(np.partition(stats, q - 1)[q - 1])
    n_plus = int(np.count_nonzero(stats > crit))
    n_zero = int(np.count_nonzero(stats == crit))
    w = stats[0]
    if w > crit:
        phi = 1.0
    elif w == crit:
        phi = float((N * Fraction(repr(float(alpha))) - n_plus) / n_zero)
    else:
        phi = 0.0
    return PhiResult(phi, crit, q, n_plus, n_zero)


def decide(phi: float, u: float | None, conservative: bool = False):
    """Map a rejection probability to (decision label, rejected flag)."""
    if phi >= 1.0:
        return "reject", True
    if phi <= 0.0:
        return "accept", False
    if conservative:
        return "accept", False
    if u < phi:
        return "randomized_reject", True
    return "randomized_accept", False


def permutation_p_value(stats) -> float:
    stats = np.asarray(stats)
    return float((1 + np.count_nonzero(stats[1:] >= stats[0])) / stats.shape[0])


def _check_beta0(d, beta0):
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=np.float64))
    if beta0.shape != (d.k,):
        raise DimensionMismatch(f"beta0 must have length k={d.k}, got {beta0.shape[0]}")
    return beta0


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")


def sr_test(d: Dataset, beta0, alpha: float = 0.05, n_prime: int = 499, seed: int = 0,
            randomization_u: float | None = None, conservative: bool = False,
            workers: int = 1, partition: StrataPartition | None = None,
            method: str = "SR", check_rank: bool = True) -> TestResult:
    """SR test of H0: beta = beta0 with the within-stratum permutation group.

    Strata are the distinct rows of Z unless ``partition`` is supplied. When
    ``randomization_u`` is None the uniform for a tie is drawn from ``seed``.
    """
    beta0 = _check_beta0(d, beta0)
    _check_alpha(alpha)
    if check_rank:
        validate_rank(d)
    p = partition_by_z(d) if partition is None else partition
    diag = diagnostics(p).to_dict()
    u = randomization_uniform(seed) if randomization_u is None else float(randomization_u)
    if not 0 <= u < 1:
        raise DomainError("randomization_u must lie in [0, 1)")

    if p.all_singletons:
        phi = float(alpha)
        decision, rejected = decide(phi, u, conservative)
        return TestResult(method, 0.0, np.zeros(1), 0.0, phi, decision, rejected, u, 1.0, alpha,
                          beta0, q=1, n_plus=0, n_zero=1, trivial=True, conservative=conservative,
                          seed=seed, n_prime=n_prime, enumerated=True, diagnostics=diag)

    perms = sample_permutation_set(p, n_prime, seed, workers)
    xt = demean_design(d, p)
    v = d.y - d.X @ beta0
    stats, ginv = permuted_statistics(xt, v, perms, p, workers, return_flag=True)
    res = phi_alpha(stats, alpha)
    decision, rejected = decide(res.phi, u, conservative)
    return TestResult(method, float(stats[0]), stats, res.critical, res.phi, decision, rejected, u,
                      permutation_p_value(stats), alpha, beta0, q=res.q, n_plus=res.n_plus,
                      n_zero=res.n_zero, used_generalized_inverse=ginv, conservative=conservative,
                      seed=seed, n_prime=n_prime, enumerated=perms.enumerated, diagnostics=diag)


def sra_test(d: Dataset, beta0, alpha: float = 0.05,
             partition: StrataPartition | None = None) -> TestResult:
    """The SR statistic compared with the chi-square(k) critical value."""
    beta0 = _check_beta0(d, beta0)
    _check_alpha(alpha)
    p = partition_by_z(d) if partition is None else partition
    xt = demean_design(d, p)
    w, ginv = _observed(xt, d.y - d.X @ beta0, p)
    crit = chi2_quantile(1.0 - alpha, d.k)
    rejected = w > crit
    return TestResult("SRa", w, np.empty(0), crit, float(rejected),
                      "reject" if rejected else "accept", rejected, None, chi2_sf(w, d.k), alpha,
                      beta0, used_generalized_inverse=ginv, diagnostics=diagnostics(p).to_dict())


# -- scalar-beta profiles ------------------------------------------------------------

class LinearProfile:
    """Permuted k = 1 statistics as exact functions of beta0.

    With permuted residual vectors r_pi(b) = Vy_pi - b * Vx_pi and weights w,
    the score is Ay - b Ax and the variance Byy - 2 b Bxy + b^2 Bxx, so every
    tested value costs O(N) after one pass over the permutations.
    """

    def __init__(self, w, blocks):
        w = np.asarray(w, dtype=np.float64)
        w2 = w * w
        acc = {k: [] for k in ("Ay", "Ax", "Byy", "Bxy", "Bxx")}
        for Vy, Vx in blocks:
            acc["Ay"].append((Vy * w).sum(axis=1))
            acc["Ax"].append((Vx * w).sum(axis=1))
            acc["Byy"].append((Vy * Vy * w2).sum(axis=1))
            acc["Bxy"].append((Vy * Vx * w2).sum(axis=1))
            acc["Bxx"].append((Vx * Vx * w2).sum(axis=1))
        for key, parts in acc.items():
            setattr(self, key, np.concatenate(parts))

    @property
    def N(self) -> int:
        return int(self.Ay.shape[0])

    def stats(self, beta0: float) -> np.ndarray:
        b0 = float(beta0)
        a = self.Ay - b0 * self.Ax
        b = self.Byy - 2.0 * b0 * self.Bxy + b0 * b0 * self.Bxx
        out = np.zeros_like(a)
        np.divide(a * a, b, out=out, where=b > 0)
        return out


def sr_linear_profile(d: Dataset, p: StrataPartition, perms: PermutationSet, workers: int = 1) -> LinearProfile:
    """LinearProfile of the SR statistic for a dataset with scalar beta."""
    if d.k != 1:
        raise DimensionMismatch("linear profiles need a scalar interest coefficient")
    act = _active_rows(p)
    xt = within_demean(d.X[:, 0], p)
    vy = within_demean(d.y, p)
    cols = np.ascontiguousarray(perms.perms[:, act])
    w = xt[act]

    def job(r):
        c = cols[r[0]:r[1]]
        return vy[c], xt[c]

    ranges = _block_ranges(cols.shape[0], act.size)
    return LinearProfile(w, (job(r) for r in ranges))
