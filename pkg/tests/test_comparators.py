import itertools
import math

import numpy as np
import pytest

from stratperm.comparators import f_test, hc_wald, pc_permutations, pc_test, sandwich_cov
from stratperm.dataset import Dataset
from stratperm.errors import DomainError, LeverageOne
from stratperm.montecarlo import DgpSpec, power_curve
from stratperm.sr import sr_test


def _random(rng, n, k=1, q=2):
    Z = np.column_stack([np.ones(n), rng.standard_normal((n, q))])
    X = rng.standard_normal((n, k)) + Z[:, 1:2]
    y = X.sum(axis=1) * 0.3 + Z @ np.ones(q + 1) + rng.standard_normal(n) * (1 + np.abs(X[:, 0]))
    return Dataset(y, X, Z)


def test_pc_equals_single_stratum_sr_with_intercept_only(rng):
    n = 40
    d = Dataset(rng.standard_normal(n), rng.standard_normal((n, 1)), np.ones((n, 1)))
    pc = pc_test(d, [0.2], n_draws=199, seed=4)
    sr = sr_test(d, [0.2], n_prime=200, seed=4)
    assert pc.statistic == pytest.approx(sr.statistic, rel=1e-10)


def test_pc_enumeration_matches_brute_force(rng):
    for n in (4, 5, 6):
        d = _random(rng, n, q=1)
        res = pc_test(d, [0.0], n_draws=10_000, seed=1)
        assert res.extra["N"] == math.factorial(n)
        # brute force over all n! permutations with independent dense algebra
        Z = d.Z
        M = np.eye(n) - Z @ np.linalg.pinv(Z)
        xr = M @ d.X[:, 0]
        e = M @ d.y

        def stat(ep):
            r = M @ ep
            return (xr @ r) ** 2 / np.sum(xr ** 2 * r ** 2)

        vals = np.array([stat(e[list(p)]) for p in itertools.permutations(range(n))])
        w = stat(e)
        assert vals[0] == pytest.approx(w, rel=1e-12)
        ref = np.count_nonzero(vals >= w * (1 - 1e-9)) / vals.size
        assert res.p_value == pytest.approx(ref, abs=1e-12)


def test_pc_permutations_shape_and_identity():
    P = pc_permutations(12, 99, seed=3)
    assert P.shape == (100, 12)
    assert P[0].tolist() == list(range(12))
    assert np.all(np.sort(P, axis=1) == np.arange(12))


def test_pc_level_dgp1():
    reps = 2000
    rate = power_curve(DgpSpec("DGP1", 100, 2), [0.0], ["PC"], reps=reps, seed=404).rate("PC")
    assert abs(rate - 0.05) <= 2 * math.sqrt(0.05 * 0.95 / reps)


def test_hc1_is_scaled_hc0(rng):
    d = _random(rng, 30, k=2)
    h0 = hc_wald(d, [0.1, -0.2], flavor="HC0").statistic
    h1 = hc_wald(d, [0.1, -0.2], flavor="HC1").statistic
    assert h1 == pytest.approx(h0 * (d.n - d.k - d.p) / d.n, rel=1e-12)


@pytest.mark.parametrize("flavor", ["HC0", "HC1", "HC3"])
def test_sandwich_against_dense_oracle(rng, flavor):
    d = _random(rng, 15, k=1, q=2)
    W = d.W
    n, m = W.shape
    XtXi = np.linalg.inv(W.T @ W)
    H = W @ XtXi @ W.T
    e = d.y - H @ d.y
    h = np.diag(H)
    omega = {"HC0": e ** 2, "HC1": e ** 2 * n / (n - m), "HC3": (e / (1 - h)) ** 2}[flavor]
    ref = XtXi @ W.T @ np.diag(omega) @ W @ XtXi
    _, cov = sandwich_cov(d, flavor)
    assert np.allclose(cov, ref, rtol=1e-8, atol=0)


def test_hc3_rejects_leverage_one(rng):
    n = 10
    X = np.zeros((n, 1))
    X[0, 0] = 1.0  # a dummy for a single observation has leverage one
    d = Dataset(rng.standard_normal(n), X, np.column_stack([np.ones(n), rng.standard_normal(n)]))
    with pytest.raises(LeverageOne):
        hc_wald(d, [0.0], flavor="HC3")
    hc_wald(d, [0.0], flavor="HC1")


def test_need_more_rows_than_columns(rng):
    d = Dataset(rng.standard_normal(3), rng.standard_normal((3, 1)),
                np.column_stack([np.ones(3), rng.standard_normal(3)]))
    with pytest.raises(DomainError):
        hc_wald(d, [0.0])
    with pytest.raises(DomainError):
        f_test(d, [0.0])


def test_f_is_zero_at_ols_estimate(rng):
    d = _random(rng, 25, k=2)
    beta = np.linalg.lstsq(d.W, d.y, rcond=None)[0][:2]
    assert f_test(d, beta).statistic == pytest.approx(0.0, abs=1e-18)


def test_f_equals_squared_t_for_k1(rng):
    d = _random(rng, 25)
    W = d.W
    coef = np.linalg.lstsq(W, d.y, rcond=None)[0]
    e = d.y - W @ coef
    s2 = e @ e / (d.n - W.shape[1])
    se = math.sqrt(s2 * np.linalg.inv(W.T @ W)[0, 0])
    t = (coef[0] - 0.4) / se
    assert f_test(d, [0.4]).statistic == pytest.approx(t * t, rel=1e-10)


def test_f_matches_rss_oracle(rng):
    d = _random(rng, 40, k=2)
    b0 = np.array([0.3, -0.1])
    rss_u = np.sum((d.y - d.W @ np.linalg.lstsq(d.W, d.y, rcond=None)[0]) ** 2)
    yr = d.y - d.X @ b0
    rss_r = np.sum((yr - d.Z @ np.linalg.lstsq(d.Z, yr, rcond=None)[0]) ** 2)
    dof2 = d.n - d.k - d.p
    ref = (rss_r - rss_u) / d.k / (rss_u / dof2)
    res = f_test(d, b0)
    assert res.statistic == pytest.approx(ref, rel=1e-9)
    assert res.extra["dof"] == [2, dof2]
