"""Special-function kernels: incomplete gamma/beta, chi-square, F and normal laws.

Quantiles are found by bracketing followed by safeguarded Newton steps on the
regularized incomplete gamma or beta function, which keeps the numerics in
this module self-contained and identical across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 10_000

__all__ = [
    "QuantileRequest",
    "quantile",
    "cdf",
    "log_gamma",
    "gammainc_lower",
    "gammainc_upper",
    "betainc",
    "normal_cdf",
    "normal_sf",
    "normal_ppf",
    "chi2_cdf",
    "chi2_sf",
    "chi2_pdf",
    "chi2_ppf",
    "chi2_quantile",
    "f_cdf",
    "f_sf",
    "f_pdf",
    "f_ppf",
]


def log_gamma(x: float) -> float:
    return math.lgamma(x)


def _gamma_prefactor(a, x):
    return math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_series(a, x):
    ap = a
    term = total = 1.0 / a
    for _ in range(_MAXIT):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * _gamma_prefactor(a, x)


def _gamma_cf(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return _gamma_prefactor(a, x) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise DomainError("shape parameter must be positive")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cf(a, x))


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise DomainError("shape parameter must be positive")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_cf(a, x))


def _beta_cf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise DomainError("beta parameters must be positive")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
              + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _beta_cf(a, b, x) / a
    return 1.0 - bt * _beta_cf(b, a, 1.0 - x) / b


# -- normal ------------------------------------------------------------------

def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_ppf(p: float) -> float:
    """Standard normal quantile (rational start refined by Halley steps)."""
    _check_prob(p)
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    for _ in range(3):
        if p <= 0.5:
            e = normal_cdf(x) - p
        else:
            e = (1.0 - p) - normal_sf(x)
        u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
        x = x - u / (1.0 + x * u / 2.0)
    return x


# -- chi-square ---------------------------------------------------------------

def chi2_cdf(x: float, dof: float) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_sf(x: float, dof: float) -> float:
    return gammainc_upper(dof / 2.0, x / 2.0)


def chi2_pdf(x: float, dof: float) -> float:
    if x <= 0:
        return 0.0 if dof > 2 else (0.5 if dof == 2 else math.inf)
    h = dof / 2.0
    return math.exp((h - 1.0) * math.log(x) - x / 2.0 - h * math.log(2.0) - math.lgamma(h))


def chi2_ppf(prob: float, dof: float) -> float:
    _check_prob(prob)
    if dof <= 0:
        raise DomainError("degrees of freedom must be positive")
    return _solve_quantile(prob, lambda x: chi2_cdf(x, dof), lambda x: chi2_sf(x, dof),
                           lambda x: chi2_pdf(x, dof), start=max(dof, 1.0))


def chi2_quantile(prob: float, dof: int) -> float:
    """Inverse CDF of the central chi-square law with ``dof`` degrees of freedom."""
    return chi2_ppf(prob, dof)


# -- F ------------------------------------------------------------------------

def f_cdf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 0.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 1.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


def f_pdf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 0.0 if d1 > 2 else (1.0 if d1 == 2 else math.inf)
    lbeta = math.lgamma(d1 / 2.0) + math.lgamma(d2 / 2.0) - math.lgamma((d1 + d2) / 2.0)
    return math.exp(0.5 * (d1 * math.log(d1) + d2 * math.log(d2))
                    + (d1 / 2.0 - 1.0) * math.log(x)
                    - (d1 + d2) / 2.0 * math.log(d2 + d1 * x) - lbeta)


def f_ppf(prob: float, d1: float, d2: float) -> float:
    _check_prob(prob)
    if d1 <= 0 or d2 <= 0:
        raise DomainError("degrees of freedom must be positive")
    return _solve_quantile(prob, lambda x: f_cdf(x, d1, d2), lambda x: f_sf(x, d1, d2),
                           lambda x: f_pdf(x, d1, d2), start=1.0)


# -- shared root finder -----------------------------------------------------------

def _check_prob(p):
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")


def _solve_quantile(p, cdf_fn, sf_fn, pdf_fn, start):
    """Root of CDF(x) = p on (0, inf): bracket, then Newton with bisection fallback."""
    if p <= 0.5:
        def resid(x):
            return cdf_fn(x) - p
    else:
        q = 1.0 - p

        def resid(x):
            return q - sf_fn(x)

    lo, hi = 0.0, start
    while resid(hi) < 0:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("quantile bracket diverged")
    x = 0.5 * (lo + hi)
    for _ in range(500):
        r = resid(x)
        if r == 0:
            return x
        if r < 0:
            lo = x
        else:
            hi = x
        dens = pdf_fn(x)
        step = r / dens if dens > 0 and math.isfinite(dens) else math.nan
        x_new = x - step
        if not (lo < x_new < hi) or math.isnan(x_new):
            x_new = 0.5 * (lo + hi)
        # relative tolerances so that tiny quantiles keep full precision
        if abs(x_new - x) <= 1e-15 * abs(x) or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    return x


# -- request-style entry point ----------------------------------------------------

@dataclass(frozen=True)
class QuantileRequest:
    distribution: str
    prob: float
    dof: tuple = ()

    def __post_init__(self):
        _check_prob(self.prob)
        name = self.distribution.lower()
        expected = {"normal": 0, "chisquare": 1, "chi2": 1, "f": 2}
        if name not in expected:
            raise DomainError(f"unknown distribution {self.distribution!r}")
        if len(self.dof) != expected[name]:
            raise DomainError(f"{self.distribution} needs {expected[name]} dof parameters")
        if any(d <= 0 for d in self.dof):
            raise DomainError("degrees of freedom must be positive")


def quantile(req: QuantileRequest) -> float:
    name = req.distribution.lower()
    if name == "normal":
        return normal_ppf(req.prob)
    if name in ("chisquare", "chi2"):
        return chi2_ppf(req.prob, *req.dof)
    return f_ppf(req.prob, *req.dof)


def cdf(distribution: str, x: float, *dof) -> float:
    name = distribution.lower()
    if name == "normal":
        return normal_cdf(x)
    if name in ("chisquare", "chi2"):
        return chi2_cdf(x, *dof)
    if name == "f":
        return f_cdf(x, *dof)
    raise DomainError(f"unknown distribution {distribution!r}")
