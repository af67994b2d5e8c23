"""Confidence intervals for a scalar coefficient by inverting tests over a grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .approx import approx_partition
from .comparators import pc_linear_profile, pc_permutations, sandwich_cov
from .dataset import Dataset, validate_rank
from .distributions import chi2_quantile, chi2_sf, f_ppf, f_sf
from .errors import MultidimensionalBeta, UnsortedGrid
from .regression import ols, residualize, within_demean
from .sr import decide, phi_alpha, sr_linear_profile
from .strata import diagnostics, partition_by_z, randomization_uniform, sample_permutation_set

METHODS = ("SR", "SRa", "ApproxSR", "PC", "HC0", "HC1", "HC3", "N-R")
_ALIASES = {
    "sr": "SR", "sra": "SRa", "approxsr": "ApproxSR", "approx": "ApproxSR", "asr": "ApproxSR",
    "pc": "PC", "hc0": "HC0", "hc1": "HC1", "hc3": "HC3", "n-r": "N-R", "nr": "N-R", "f": "N-R",
}


def canonical_method(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}") from None


@dataclass
class AcceptanceProfile:
    """Per-grid-point outcome of one method evaluated with shared randomness."""

    method: str
    grid: np.ndarray
    statistic: np.ndarray
    phi: np.ndarray
    rejected: np.ndarray
    p_value: np.ndarray
    u: float | None = None
    trivial: bool = False
    info: dict = field(default_factory=dict)


def acceptance_profile(d: Dataset, grid, method: str = "SR", alpha: float = 0.05,
                       n_prime: int = 499, seed: int = 0, workers: int = 1,
                       conservative: bool = False, s_bins: int | None = None,
                       randomization_u: float | None = None) -> AcceptanceProfile:
    """Evaluate one test of beta = b for every b in ``grid`` (scalar beta only).

    Permutation methods share one permutation set and one uniform across the
    grid; a randomized SR decision rejects when u < phi.
    """
    if d.k != 1:
        raise MultidimensionalBeta("interval inversion supports a single interest coefficient")
    method = canonical_method(method)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    G = grid.shape[0]
    stat = np.zeros(G)
    phi = np.zeros(G)
    pval = np.ones(G)
    info = {}

    if method in ("SR", "ApproxSR"):
        if method == "SR":
            part = partition_by_z(d)
        else:
            part, _, info = approx_partition(d, s_bins)
        info["diagnostics"] = diagnostics(part).to_dict()
        u = randomization_uniform(seed) if randomization_u is None else float(randomization_u)
        if part.all_singletons:
            phi[:] = alpha
            rejected = np.array([decide(alpha, u, conservative)[1] for _ in range(G)], dtype=bool)
            return AcceptanceProfile(method, grid, stat, phi, rejected, pval, u, True, info)
        perms = sample_permutation_set(part, n_prime, seed, workers)
        prof = sr_linear_profile(d, part, perms, workers)
        rejected = np.zeros(G, dtype=bool)
        for i, b in enumerate(grid):
            s = prof.stats(b)
            r = phi_alpha(s, alpha)
            stat[i], phi[i] = s[0], r.phi
            pval[i] = (1 + np.count_nonzero(s[1:] >= s[0])) / s.shape[0]
            rejected[i] = decide(r.phi, u, conservative)[1]
        info["N"] = perms.N
        return AcceptanceProfile(method, grid, stat, phi, rejected, pval, u, False, info)

    if method == "PC":
        perms = pc_permutations(d.n, n_prime, seed)
        prof = pc_linear_profile(d, perms, workers)
        for i, b in enumerate(grid):
            s = prof.stats(b)
            stat[i] = s[0]
            pval[i] = (1 + np.count_nonzero(s[1:] >= s[0])) / s.shape[0]
        rejected = pval <= alpha
        info["N"] = prof.N
        return AcceptanceProfile(method, grid, stat, rejected.astype(float), rejected, pval, info=info)

    if method == "SRa":
        part = partition_by_z(d)
        xt = within_demean(d.X[:, 0], part)
        vy = within_demean(d.y, part)
        w2 = xt * xt
        Ay, Ax = float(xt @ vy), float(xt @ xt)
        Byy, Bxy, Bxx = float(w2 @ (vy * vy)), float(w2 @ (vy * xt)), float(w2 @ (xt * xt))
        a = Ay - grid * Ax
        den = Byy - 2.0 * grid * Bxy + grid * grid * Bxx
        np.divide(a * a, den, out=stat, where=den > 0)
        crit = chi2_quantile(1.0 - alpha, 1)
        pval = np.array([chi2_sf(s, 1) for s in stat])
        rejected = stat > crit
        info["diagnostics"] = diagnostics(part).to_dict()
    elif method in ("HC0", "HC1", "HC3"):
        coef, cov = sandwich_cov(d, method)
        stat = (coef[0] - grid) ** 2 / cov[0, 0]
        crit = chi2_quantile(1.0 - alpha, 1)
        pval = np.array([chi2_sf(s, 1) for s in stat])
        rejected = pval <= alpha
    else:  # N-R
        fit = ols(d.y, d.W)
        dof2 = d.n - 1 - d.p
        s2 = float(fit.residuals @ fit.residuals) / dof2
        xr = residualize(d.X[:, 0], d.Z)
        stat = (fit.coef[0] - grid) ** 2 * float(xr @ xr) / s2
        crit = f_ppf(1.0 - alpha, 1, dof2)
        pval = np.array([f_sf(s, 1, dof2) for s in stat])
        rejected = pval <= alpha
    info["critical"] = crit
    return AcceptanceProfile(method, grid, stat, rejected.astype(float), rejected, pval, info=info)


@dataclass
class ConfidenceInterval:
    """Acceptance region of an inverted test over a grid of tested values.

    ``interval`` is the convex hull of the accepted points widened by half a
    grid step on each side; a trivial test gives (-inf, inf).
    """

    method: str
    level: float
    grid: np.ndarray
    accepted: np.ndarray
    interval: tuple
    raw_region: list
    trivial: bool
    convexified: bool
    empty: bool
    shared_seed: int
    n_prime: int
    warnings: list = field(default_factory=list)
    profile: AcceptanceProfile | None = None

    @property
    def lo(self) -> float:
        return self.interval[0]

    @property
    def hi(self) -> float:
        return self.interval[1]

    def contains(self, other: "ConfidenceInterval") -> bool:
        if other.empty:
            return True
        if self.empty:
            return False
        return self.lo <= other.lo and other.hi <= self.hi

    def to_dict(self, include_profile: bool = True) -> dict:
        def num(x):
            if x is None:
                return None
            if math.isinf(x):
                return "inf" if x > 0 else "-inf"
            return float(x)

        out = {
            "tool_version": __version__,
            "method": self.method,
            "level": self.level,
            "interval": None if self.empty else [num(self.lo), num(self.hi)],
            "endpoint_convention": "extreme accepted grid points widened by half a grid step",
            "trivial": self.trivial,
            "convexified": self.convexified,
            "empty": self.empty,
            "shared_seed": self.shared_seed,
            "n_prime": self.n_prime,
            "raw_region": [float(b) for b in self.raw_region],
            "warnings": list(self.warnings),
        }
        if include_profile and self.profile is not None:
            prof = self.profile
            out["u"] = prof.u
            out["profile"] = {
                "beta0": prof.grid.tolist(),
                "statistic": prof.statistic.tolist(),
                "phi": prof.phi.tolist(),
                "p_value": prof.p_value.tolist(),
                "accepted": [bool(a) for a in self.accepted],
            }
            out.update({k: v for k, v in prof.info.items() if k != "critical"})
        return out


def parse_grid(spec: str) -> np.ndarray:
    """``"lo:hi:step"`` to an inclusive, evenly spaced grid."""
    try:
        lo, hi, step = (float(t) for t in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError("grid needs step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


def invert_test(d: Dataset, grid, alpha: float = 0.05, n_prime: int = 499, seed: int = 0,
                method: str = "SR", workers: int = 1, conservative: bool = False,
                s_bins: int | None = None) -> ConfidenceInterval:
    """Confidence interval at level 1 - alpha by test inversion on ``grid``."""
    if d.k != 1:
        raise MultidimensionalBeta("interval inversion supports a single interest coefficient")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise UnsortedGrid("grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise UnsortedGrid("grid must be strictly ascending")
    validate_rank(d)
    prof = acceptance_profile(d, grid, method, alpha, n_prime, seed, workers, conservative, s_bins)
    accepted = ~prof.rejected
    base = dict(method=prof.method, level=1.0 - alpha, grid=grid, accepted=accepted,
                shared_seed=seed, n_prime=n_prime, profile=prof)
    if prof.trivial:
        return ConfidenceInterval(interval=(-math.inf, math.inf), raw_region=grid[accepted].tolist(),
                                  trivial=True, convexified=False, empty=False,
                                  warnings=["all strata are singletons; the test is trivial"], **base)
    idx = np.flatnonzero(accepted)
    if idx.size == 0:
        return ConfidenceInterval(interval=(math.nan, math.nan), raw_region=[], trivial=False,
                                  convexified=False, empty=True,
                                  warnings=["no grid point accepted"], **base)
    i0, i1 = int(idx[0]), int(idx[-1])
    if grid.size == 1:
        h_lo = h_hi = 0.0
    else:
        h_lo = grid[i0] - grid[i0 - 1] if i0 > 0 else grid[1] - grid[0]
        h_hi = grid[i1 + 1] - grid[i1] if i1 < grid.size - 1 else grid[-1] - grid[-2]
    warnings = []
    if i0 == 0:
        warnings.append("lower end of the grid accepted; widen the grid")
    if i1 == grid.size - 1:
        warnings.append("upper end of the grid accepted; widen the grid")
    convexified = bool(idx.size != i1 - i0 + 1)
    if convexified:
        warnings.append("acceptance region has holes; reporting its convex hull")
    lo = float(np.round(grid[i0] - h_lo / 2, 12))
    hi = float(np.round(grid[i1] + h_hi / 2, 12))
    return ConfidenceInterval(interval=(lo, hi), raw_region=grid[idx].tolist(), trivial=False,
                              convexified=convexified, empty=False, warnings=warnings, **base)
