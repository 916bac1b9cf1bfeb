import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksm.accum import LogMgf, Moments
from ksm.broadcast_sim import (
    SimSpec,
    census_distribution_check,
    estimator_values,
    run_batch,
    run_per_root,
    sample_replica,
    simulate_chunk,
)
from ksm.errors import BudgetExceeded
from ksm.exact_oracles import moments_exact
from ksm.spectral import analyze, symmetric_channel, validate_channel

# reversible birth-death chain: real spectrum, zero entries
BIRTH_DEATH3 = [[0.5, 0.5, 0.0], [0.2, 0.6, 0.2], [0.0, 0.4, 0.6]]


@pytest.fixture(scope="module")
def birth_death3():
    return analyze(validate_channel(BIRTH_DEATH3), 3)


@pytest.mark.parametrize("i", [0, 1])
def test_level_zero_is_the_root(bsc01, i):
    r = sample_replica(SimSpec(bsc01, 0, 3, 1, root_state=i), 2)
    assert r.root_state == i
    assert r.s_n == bsc01.nu[i]
    assert r.census == tuple(int(j == i) for j in range(2))


def test_level_one_values(bsc01):
    spec = SimSpec(bsc01, 1, 200, 3, root_state=0)
    seen = {round(sample_replica(spec, r).s_n, 12) for r in range(200)}
    # (sigma_a + sigma_b) / (2 * 0.8)
    assert seen <= {1.25, 0.0, -1.25}
    assert 1.25 in seen and 0.0 in seen


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(0, 5), st.integers(0, 2**63), st.booleans())
def test_census_totals_and_consistency(b, n, seed, stationary):
    sd = analyze(symmetric_channel(0.15), b)
    spec = SimSpec(sd, n, 40, seed, root_state=None if stationary else 1)
    roots, census = simulate_chunk(spec, 0, 40)
    assert np.all(census.sum(axis=1) == b**n)
    s, q = estimator_values(sd, n, census)
    direct = (census * sd.nu).sum(axis=1) / (b * sd.lam) ** n
    np.testing.assert_allclose(s, direct, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(q, s * (b * sd.lam**2) ** (n / 2), rtol=1e-12)


def test_replica_independent_of_chunking(birth_death3):
    spec = SimSpec(birth_death3, 4, 500, 11)
    roots, census = simulate_chunk(spec, 0, 500)
    r2, c2 = simulate_chunk(spec, 137, 161)
    np.testing.assert_array_equal(roots[137:161], r2)
    np.testing.assert_array_equal(census[137:161], c2)
    one = sample_replica(spec, 150)
    assert one.census == tuple(census[150])


def test_zero_probability_transitions_never_happen(birth_death3):
    # from state 0 the chain cannot move to state 2 in one step
    _, census = simulate_chunk(SimSpec(birth_death3, 1, 2000, 5, root_state=0), 0, 2000)
    assert census[:, 2].sum() == 0


def test_batch_is_identical_across_thread_counts(bsc01):
    spec = SimSpec(bsc01, 5, 20_000, 42)
    a = run_batch(spec, [-1, 0.5], threads=1, keep_rows=True)
    b = run_batch(spec, [-1, 0.5], threads=3, keep_rows=True)
    assert a.to_dict() == b.to_dict()
    for key in a.rows:
        assert a.rows[key].tobytes() == b.rows[key].tobytes()


def test_single_replica_batch(bsc01):
    spec = SimSpec(bsc01, 3, 1, 8, root_state=0)
    batch = run_batch(spec, [0.5])
    r = sample_replica(spec, 0)
    st_ = batch.root(0)
    assert st_.count == 1
    assert st_.s.mean == r.s_n
    assert st_.s.variance == 0.0 and not st_.s.variance_defined
    assert st_.s.mean_se == 0.0
    assert st_.mgf[0].value == pytest.approx(math.exp(0.5 * r.s_n))
    assert st_.mgf[0].se == 0.0


def test_budget_guards(bsc01):
    with pytest.raises(BudgetExceeded):
        SimSpec(bsc01, 25, 1, 0)
    with pytest.raises(BudgetExceeded):
        run_batch(SimSpec(bsc01, 24, 2**17, 0))


def test_unbiased_for_each_root_state(birth_death3):
    n = 3
    v = moments_exact(birth_death3, n).variance[n]
    for i in range(3):
        batch = run_batch(SimSpec(birth_death3, n, 40_000, 100 + i, root_state=i))
        s = batch.root(i).s
        assert abs(s.mean - birth_death3.nu[i]) <= 4 * s.mean_se
        assert s.variance == pytest.approx(v[i], rel=0.05)


def test_census_check_stationary(bsc01):
    spec = SimSpec(bsc01, 4, 100_000, 17)
    chk = census_distribution_check(spec, run_batch(spec))
    assert chk.applicable
    assert chk.max_deviation <= 0.005


def test_census_check_level_zero(birth_death3):
    spec = SimSpec(birth_death3, 0, 50_000, 4)
    chk = census_distribution_check(spec, run_batch(spec))
    # binomial SE at most 0.5 / sqrt(50000)
    assert chk.max_deviation <= 4 * 0.5 / math.sqrt(50_000)


def test_census_check_not_applicable_for_fixed_root(bsc01):
    spec = SimSpec(bsc01, 2, 10, 0, root_state=1)
    assert not census_distribution_check(spec, run_batch(spec)).applicable


def test_per_root_merge(bsc01):
    batch = run_per_root(bsc01, 2, 500, 9, [0.5])
    assert sorted(batch.per_root) == [0, 1]
    assert batch.replicas == 1000
    assert all(st_.count == 500 for st_ in batch.per_root.values())
    assert batch.census_total.sum() == 1000 * 4


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=200),
    st.integers(1, 199),
)
def test_moments_merge_matches_direct(xs, cut):
    x = np.array(xs)
    cut = min(cut, len(xs) - 1)
    merged = Moments.of(x[:cut]).merge(Moments.of(x[cut:]))
    direct = Moments.of(x)
    assert merged.count == direct.count
    scale = max(1.0, float(np.max(np.abs(x))))
    assert merged.mean == pytest.approx(direct.mean, abs=1e-9 * scale)
    for attr, p in (("m2", 2), ("m3", 3), ("m4", 4)):
        assert getattr(merged, attr) == pytest.approx(getattr(direct, attr), abs=1e-8 * len(xs) * scale**p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=100), st.floats(-3, 3))
def test_log_mgf_merge_matches_direct(xs, t):
    x = np.array(xs)
    h = len(xs) // 2
    merged = LogMgf.of(t, x[:h]).merge(LogMgf.of(t, x[h:]))
    direct = np.mean(np.exp(t * x))
    assert merged.value == pytest.approx(direct, rel=1e-10)
    assert merged.se == pytest.approx(np.std(np.exp(t * x), ddof=1) / math.sqrt(len(xs)), rel=1e-6, abs=1e-7 * merged.value)


def test_moment_statistics_against_scipy():
    from scipy import stats

    x = np.random.default_rng(0).gamma(2.0, size=5000)
    m = Moments.of(x[:1234]).merge(Moments.of(x[1234:]))
    assert m.variance == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    assert m.skewness == pytest.approx(stats.skew(x), rel=1e-10)
    assert m.excess_kurtosis == pytest.approx(stats.kurtosis(x), rel=1e-10)
