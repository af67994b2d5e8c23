"""Property-based checks of the algebraic invariants (no Monte Carlo)."""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import all_stratified_perms
from stratperm.approx import discretize_index, s_from_correlation
from stratperm.comparators import f_test, hc_wald, pc_test
from stratperm.dataset import Dataset, ar_offset, load_csv, validate_rank, write_csv
from stratperm.errors import DegenerateStatistic, RankDeficient
from stratperm.inversion import invert_test, parse_grid
from stratperm.regression import demean_design, ols, within_demean
from stratperm.sr import permuted_statistics, phi_alpha, sr_test, wald_statistic
from stratperm.strata import (
    group_size,
    log_group_size,
    partition_from_labels,
    sample_permutation_set,
)

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def stratified_problem(draw, max_n=30, k_max=2):
    n = draw(st.integers(6, max_n))
    S = draw(st.integers(1, max(1, n // 3)))
    labels = np.array(draw(st.lists(st.integers(0, S - 1), min_size=n, max_size=n)))
    k = draw(st.integers(1, k_max))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k)) * draw(st.floats(0.1, 10))
    v = rng.standard_normal(n) * draw(st.floats(0.1, 10))
    p = partition_from_labels(labels)
    d = Dataset(np.zeros(n), X, np.column_stack([np.ones(n), labels]))
    return d, p, demean_design(d, p), v, labels, seed


def _stat_or_skip(xt, v):
    try:
        return wald_statistic(xt, v)
    except DegenerateStatistic:
        assume(False)


@SETTINGS
@given(stratified_problem(), st.floats(1e-3, 1e3), st.booleans())
def test_scale_invariance(prob, c, neg):
    d, p, xt, v, labels, _ = prob
    c = -c if neg else c
    w = _stat_or_skip(xt, v)
    assert wald_statistic(xt, c * v) == pytest.approx(w, rel=1e-10, abs=1e-12)


@SETTINGS
@given(stratified_problem(), st.lists(finite, min_size=30, max_size=30))
def test_stratum_constant_shift_invariance(prob, shifts):
    d, p, xt, v, labels, _ = prob
    w = _stat_or_skip(xt, v)
    c = np.asarray(shifts)[labels]
    assert wald_statistic(xt, v + c) == pytest.approx(w, rel=1e-10, abs=1e-10 * (1 + np.abs(c).max()))


@SETTINGS
@given(stratified_problem())
def test_demeaning_commutes_with_stratified_permutations(prob):
    d, p, xt, v, labels, seed = prob
    perms = sample_permutation_set(p, 40, seed)
    Dv = within_demean(v, p)
    for pi in perms.perms:
        assert np.allclose(within_demean(v[pi], p), Dv[pi], rtol=0, atol=1e-12 * (1 + np.abs(v).max()))
    assert np.allclose(within_demean(Dv, p), Dv, rtol=0, atol=1e-12 * (1 + np.abs(v).max()))


@SETTINGS
@given(stratified_problem())
def test_fast_path_equals_slow_path(prob):
    d, p, xt, v, labels, seed = prob
    _stat_or_skip(xt, v)
    perms = sample_permutation_set(p, 30, seed)
    fast = permuted_statistics(xt, v, perms)
    for pi, f in zip(perms.perms, fast):
        try:
            slow = wald_statistic(xt, v[pi])
        except DegenerateStatistic:
            continue
        assert f == pytest.approx(slow, rel=1e-10, abs=1e-12)


@SETTINGS
@given(stratified_problem(), st.floats(-2, 2))
def test_null_statistic_depends_only_on_errors(prob, beta):
    d, p, xt, u, labels, seed = prob
    _stat_or_skip(xt, u)
    y = d.X @ np.full(d.k, beta) + 3.0 * labels + u
    perms = sample_permutation_set(p, 20, seed)
    from_y = permuted_statistics(xt, y - d.X @ np.full(d.k, beta), perms)
    from_u = permuted_statistics(xt, u, perms)
    assert np.allclose(from_y, from_u, rtol=1e-10, atol=1e-12)


@SETTINGS
@given(stratified_problem())
def test_permutations_preserve_strata(prob):
    d, p, xt, v, labels, seed = prob
    perms = sample_permutation_set(p, 50, seed)
    assert np.all(labels[perms.perms] == labels)
    assert perms.perms[0].tolist() == list(range(p.n))


@SETTINGS
@given(st.lists(st.integers(1, 5), min_size=1, max_size=6))
def test_log_group_size_brute_force(sizes):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    p = partition_from_labels(labels)
    size = group_size(p)
    assume(size <= 10 ** 6)
    if size <= 2000:
        assert len(all_stratified_perms(p)) == size
    assert log_group_size(p) == pytest.approx(math.log(size), rel=1e-9, abs=1e-12)


@SETTINGS
@given(hnp.arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e6, 1e6)), st.floats(0.001, 0.999))
def test_phi_is_a_probability(stats, alpha):
    r = phi_alpha(stats, alpha)
    assert 0.0 <= r.phi <= 1.0
    if stats[0] != r.critical:
        assert r.phi in (0.0, 1.0)
    else:
        # randomization only at the critical value, with the exact tie weight
        assert r.phi == pytest.approx((stats.size * alpha - r.n_plus) / r.n_zero, abs=1e-9)
    # at most floor(N alpha) permuted values exceed the critical value
    assert r.n_plus <= stats.size - r.q


@given(st.floats(0.001, 0.999), finite)
def test_phi_trivial_case_is_alpha(alpha, w):
    assert phi_alpha([w], alpha).phi == pytest.approx(alpha, rel=1e-15)


@SETTINGS
@given(hnp.arrays(np.float64, st.integers(2, 80), elements=st.floats(0, 50)),
       st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_phi_monotone_in_alpha(stats, a1, a2):
    lo, hi = sorted((a1, a2))
    assert phi_alpha(stats, lo).phi <= phi_alpha(stats, hi).phi + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_ci_nesting_90_in_95(seed):
    rng = np.random.default_rng(seed)
    n = 40
    z = rng.integers(0, 3, n).astype(float)
    x = rng.standard_normal(n) + z
    d = Dataset(0.4 * x + z + rng.standard_normal(n) * (1 + 0.5 * z), x, np.column_stack([np.ones(n), z]))
    grid = parse_grid("-2:3:0.02")
    c95 = invert_test(d, grid, 0.05, n_prime=199, seed=seed)
    c90 = invert_test(d, grid, 0.10, n_prime=199, seed=seed)
    assert np.all(c95.accepted[c90.accepted])
    assert c95.contains(c90)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_duality_with_standalone_tests(seed):
    rng = np.random.default_rng(seed)
    n = 30
    z = rng.integers(0, 2, n).astype(float)
    x = rng.standard_normal(n)
    d = Dataset(x + z + rng.standard_normal(n), x, np.column_stack([np.ones(n), z]))
    ci = invert_test(d, parse_grid("-1:3:0.1"), n_prime=99, seed=seed)
    for b in ci.raw_region[::4]:
        assert not sr_test(d, [b], n_prime=99, seed=seed).rejected


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 4))
def test_determinism_across_thread_counts(seed, threads):
    rng = np.random.default_rng(seed)
    n = 300
    z = rng.integers(0, 4, n).astype(float)
    x = rng.standard_normal(n) + z
    d = Dataset(z + rng.standard_normal(n), x, np.column_stack([np.ones(n), z]))
    a = sr_test(d, [0.1], n_prime=1500, seed=seed, workers=1)
    b = sr_test(d, [0.1], n_prime=1500, seed=seed, workers=threads)
    assert np.array_equal(a.permuted, b.permuted) and a.phi == b.phi and a.u == b.u
    grid = parse_grid("-0.5:0.7:0.05")
    ca = invert_test(d, grid, n_prime=600, seed=seed, workers=1)
    cb = invert_test(d, grid, n_prime=600, seed=seed, workers=threads)
    assert ca.interval == cb.interval and np.array_equal(ca.profile.statistic, cb.profile.statistic)


@SETTINGS
@given(hnp.arrays(np.float64, st.integers(2, 40), elements=st.floats(-100, 100)),
       st.integers(1, 12), st.floats(0.01, 100), finite)
def test_binning_is_affine_invariant(index, s_bins, scale, shift):
    a = discretize_index(index, s_bins).bin_of
    # exact powers of two keep the affine map free of rounding
    scale = 2.0 ** round(math.log2(scale))
    b = discretize_index(index * scale + round(shift), s_bins).bin_of
    assert np.array_equal(a, b)


@given(st.integers(2, 5000), st.floats(0, 1))
def test_data_driven_s_bounds(n, corr):
    s = s_from_correlation(n, corr, "ceil")
    assert math.ceil(n / math.sqrt(n)) - 1 <= s <= n
    assert 1 <= s_from_correlation(n, corr) <= n


@SETTINGS
@given(st.integers(0, 10 ** 6), st.floats(0.01, 100))
def test_comparator_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    n = 25
    Z = np.column_stack([np.ones(n), rng.standard_normal(n)])
    X = rng.standard_normal((n, 1))
    y = X[:, 0] + Z[:, 1] + rng.standard_normal(n)
    d, dc = Dataset(y, X, Z), Dataset(c * y, X, Z)
    for fn in (f_test, lambda dd, b: hc_wald(dd, b, flavor="HC3")):
        r1, r2 = fn(d, [0.3]), fn(dc, [0.3 * c])
        assert r2.statistic == pytest.approx(r1.statistic, rel=1e-9)
        assert r1.rejected == r2.rejected
    assert pc_test(dc, [0.3 * c], n_draws=49, seed=seed).statistic == pytest.approx(
        pc_test(d, [0.3], n_draws=49, seed=seed).statistic, rel=1e-9)


@SETTINGS
@given(st.integers(0, 10 ** 6))
def test_leverage_sums_to_columns(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20, 4))
    assert ols(rng.standard_normal(20), A).leverage.sum() == pytest.approx(4.0, abs=1e-8)


@SETTINGS
@given(st.integers(0, 10 ** 6))
def test_rank_check_ignores_column_order(seed):
    rng = np.random.default_rng(seed)
    n = 12
    Z = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    X = rng.standard_normal((n, 2))
    if seed % 2:
        X[:, 1] = Z[:, 1] - X[:, 0]  # collinear with the others
    outcomes = []
    for d in (Dataset(np.zeros(n), X, Z), Dataset(np.zeros(n), X[:, ::-1], Z[:, [0, 2, 1]])):
        try:
            validate_rank(d)
            outcomes.append(True)
        except RankDeficient:
            outcomes.append(False)
    assert outcomes[0] == outcomes[1] == (seed % 2 == 0)


@SETTINGS
@given(hnp.arrays(np.float64, st.integers(1, 20), elements=finite))
def test_ar_offset_zero_is_bitwise_identity(y):
    out = ar_offset(y, np.ones((y.size, 2)), [0.0, 0.0])
    assert np.array_equal(out, y) and out is not y


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (8, 4), elements=st.floats(-1e300, 1e300, allow_subnormal=True)))
def test_csv_round_trip_property(tmp_path_factory, M):
    n = M.shape[0]
    Z = np.column_stack([np.ones(n), M[:, 2:]])
    d = Dataset(M[:, 0], M[:, 1], Z)
    f = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, f)
    try:
        back = load_csv(f, ["x1"], ["z1", "z2"], "y")
    except RankDeficient:
        return
    assert np.array_equal(back.y, d.y) and np.array_equal(back.X, d.X) and np.array_equal(back.Z, d.Z)
