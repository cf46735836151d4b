import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracechain import metrics
from tracechain.config import default_scenarios
from tracechain.engine import make_stream


def gini_bruteforce(values):
    """Independent O(n^2) pairwise oracle."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    diffs = np.abs(values[:, None] - values[None, :]).sum()
    return diffs / (2 * n * n * values.mean())


# ------------------------------------------------------------------ lorenz

def test_lorenz_uniform_is_diagonal():
    points = metrics.lorenz_curve([5, 5, 5, 5])
    assert np.allclose(points[:, 0], points[:, 1])


def test_lorenz_single_holder():
    points = metrics.lorenz_curve([0, 0, 0, 1])
    assert points[3].tolist() == [0.75, 0.0]
    assert points[4].tolist() == [1.0, 1.0]


def test_lorenz_prefix_sums():
    points = metrics.lorenz_curve([1, 2, 3, 4])
    assert np.allclose(points[:, 1], [0.0, 0.1, 0.3, 0.6, 1.0])


def test_lorenz_monotone_convex():
    rng = make_stream(1, 1)
    values = rng.random(500) * 100
    points = metrics.lorenz_curve(values)
    assert np.all(np.diff(points[:, 1]) >= 0)
    assert np.all(np.diff(np.diff(points[:, 1])) >= -1e-12)  # convex
    assert points[0].tolist() == [0.0, 0.0]
    assert points[-1].tolist() == [1.0, 1.0]


def test_lorenz_rejects_all_zero():
    with pytest.raises(ValueError):
        metrics.lorenz_curve([0, 0, 0])


# -------------------------------------------------------------------- gini

def test_gini_examples():
    assert metrics.gini([5, 5, 5, 5]) == 0.0
    assert metrics.gini([0, 0, 0, 1]) == pytest.approx(0.75)
    # pairwise oracle: sum of |differences| = 20, 2 * n^2 * mean = 80
    assert gini_bruteforce([1, 2, 3, 4]) == pytest.approx(0.25)
    assert metrics.gini([1, 2, 3, 4]) == pytest.approx(0.25)


def test_gini_matches_bruteforce():
    rng = make_stream(2, 1)
    for n in (2, 3, 17, 100, 1000):
        values = rng.random(n) * 50
        assert metrics.gini(values) == pytest.approx(gini_bruteforce(values), abs=1e-12)


def test_gini_dual_computation_agreement():
    rng = make_stream(3, 1)
    for n in (2, 10, 100, 1000):
        values = rng.random(n) * 1000
        assert abs(metrics.gini(values) - metrics.gini_lorenz_area(values)) < 1e-9


def test_gini_scale_invariance_and_translation():
    rng = make_stream(4, 1)
    values = rng.random(50) * 10
    g = metrics.gini(values)
    assert metrics.gini(values * 3.7) == pytest.approx(g)
    assert metrics.gini(values + 5.0) < g  # uniform top-up equalizes


def test_gini_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.gini([0.0, 0.0])
    with pytest.raises(ValueError):
        metrics.gini([1.0, -1.0])
    with pytest.raises(ValueError):
        metrics.gini([])
    assert metrics.gini_or_zero([0.0, 0.0]) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e6), min_size=2, max_size=60)
       .filter(lambda v: sum(v) > 0))
def test_gini_properties(values):
    g = metrics.gini(values)
    assert 0.0 <= g <= 1.0
    assert abs(g - metrics.gini_lorenz_area(values)) < 1e-9


# ------------------------------------------------------------- group share

def test_group_share_symmetry():
    shares = metrics.group_stake_share([1.0] * 6, [0, 0, 1, 1, 2, 2])
    assert np.allclose(shares, [1 / 3, 1 / 3, 1 / 3])
    assert shares.sum() == pytest.approx(1.0)


def test_group_share_weighting():
    shares = metrics.group_stake_share([1, 1, 8], [0, 1, 2])
    assert np.allclose(shares, [0.1, 0.1, 0.8])


# ------------------------------------------------------------------- loss

def test_loss_percentage():
    gt = {(0, 1, 5): True, (0, 2, 5): True, (1, 2, 6): False, (3, 4, 7): True}
    assert metrics.loss_percentage(gt) == pytest.approx(25.0)
    with pytest.raises(ValueError):
        metrics.loss_percentage({})


# ------------------------------------------------------------------ welch

def test_welch_identical_samples():
    t, p = metrics.welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert t == 0.0 and p == pytest.approx(1.0)


def test_welch_shifted_samples():
    t, p = metrics.welch_t_test([1.0, 2.0, 3.0], [101.0, 102.0, 103.0])
    assert p < 0.01
    # textbook formula: t = -100 / sqrt(2/3), df = 4
    assert t == pytest.approx(-100 / math.sqrt(2 / 3))


def test_welch_agrees_with_scipy():
    from scipy import stats

    rng = make_stream(5, 1)
    a = rng.normal(0, 1, 30)
    b = rng.normal(0.5, 2, 40)
    t, p = metrics.welch_t_test(a, b)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic)
    assert p == pytest.approx(ref.pvalue)


def test_welch_zero_variance_cases():
    assert metrics.welch_t_test([1.0, 1.0], [1.0, 1.0]) == (0.0, 1.0)
    t, p = metrics.welch_t_test([1.0, 1.0], [2.0, 2.0])
    assert p == 0.0 and t < 0
    with pytest.raises(ValueError):
        metrics.welch_t_test([1.0], [1.0, 2.0])


# -------------------------------------------------- truncated normal lengths

def test_expected_truncated_length_closed_forms():
    assert metrics.expected_truncated_length(0, 2) == pytest.approx(2 / math.sqrt(2 * math.pi))
    assert metrics.expected_truncated_length(5, 2) == pytest.approx(5.0040, abs=5e-4)
    # bound equals the exact value at mu = 0
    assert metrics.expected_truncated_length(0, 2, bound=True) == pytest.approx(
        metrics.expected_truncated_length(0, 2))


def test_bound_dominates_exact():
    for mu, sigma in [(0, 2), (0, 1), (2, 4), (2, 2), (5, 2), (7, 2), (1, 3)]:
        exact = metrics.expected_truncated_length(mu, sigma)
        bound = metrics.expected_truncated_length(mu, sigma, bound=True)
        assert bound >= exact - 1e-12


def test_expected_length_matches_monte_carlo():
    rng = make_stream(6, 1)
    for mu, sigma in [(0, 2), (2, 4), (5, 2), (0, 1), (2, 2), (7, 2)]:
        draws = np.maximum(rng.normal(mu, sigma, 1_000_000), 0.0)
        se = draws.std() / math.sqrt(len(draws))
        assert abs(draws.mean() - metrics.expected_truncated_length(mu, sigma)) < 3 * se


def test_expected_length_rejects_bad_sigma():
    with pytest.raises(ValueError):
        metrics.expected_truncated_length(0, 0)


# ----------------------------------------------------------------- storage

def test_storage_analytic_reproduces_published_bytes():
    est = metrics.storage_analytic(default_scenarios())
    assert est.header_bytes == 78
    assert est.blocks_per_hour == 12
    assert est.header_bytes_per_hour == 936
    by_name = {r.name: r.hourly_bytes_bound for r in est.scenarios}
    # published integers are 306 / 3374 / 36227 / 40843; the bound
    # arithmetic lands within 2 bytes wherever their rounding differs
    assert abs(by_name["sparse"] - 306) <= 2
    assert abs(by_name["medium"] - 3374) <= 2
    assert abs(by_name["crowded"] - 36227) <= 2
    assert abs(est.total_hourly_bytes - 40843) <= 2
    assert est.kb_per_hour == 39.89
    assert est.daily_kb == 957.36
    assert est.daily_kb * 1024 < 1_000_000  # under a megabyte a day


def test_storage_analytic_exact_below_bound():
    est = metrics.storage_analytic(default_scenarios())
    for row in est.scenarios:
        assert row.hourly_bytes_exact <= row.hourly_bytes_bound
    assert est.total_hourly_bytes_exact <= est.total_hourly_bytes


def test_storage_empirical_requires_duration():
    from tracechain.ledger import Chain

    with pytest.raises(ValueError):
        metrics.storage_empirical(Chain(), 0.0)
