"""Evaluation metrics: sanitized RMSE, parameter MAPE, Wilcoxon signed-rank."""
import numpy as np
import pytest
from scipy import stats as sps

from pidm.errors import ConfigError, EstimationError, ShapeError
from pidm.metrics import (
    CLIP_LIMIT,
    EXACT_MAX_N,
    MAPE_WINDOW,
    NONFINITE_SENTINEL,
    mape,
    rmse,
    sanitize,
    wilcoxon_signed_rank,
)


from .util import brute_force_two_sided_p


# ---------------------------------------------------------------------------
# sanitize / rmse


def test_sanitize_order_nonfinite_then_clip():
    arr = np.array([np.nan, np.inf, -np.inf, 2e6, -2e6, 1.5])
    out = sanitize(arr)
    np.testing.assert_array_equal(
        out, [NONFINITE_SENTINEL, NONFINITE_SENTINEL, NONFINITE_SENTINEL, CLIP_LIMIT, -CLIP_LIMIT, 1.5]
    )


def test_rmse_trivial_cases():
    a = np.array([1.0, 2.0, 3.0])
    assert rmse(a, a) == 0.0
    assert rmse(a + 1.0, a) == 1.0
    assert rmse(np.array([3.0]), np.array([0.0])) == 3.0


def test_rmse_known_value_with_nan():
    x_hat = np.array([np.nan, 1.0, 2.0])
    x_true = np.array([0.0, 0.0, 0.0])
    want = np.sqrt((NONFINITE_SENTINEL**2 + 1.0 + 4.0) / 3.0)
    assert rmse(x_hat, x_true) == want


def test_rmse_clip_bounds_error():
    x_hat = np.array([1e12])
    x_true = np.array([0.0])
    assert rmse(x_hat, x_true) == CLIP_LIMIT


def test_rmse_invariances():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(50)
    b = rng.standard_normal(50)
    base = rmse(a, b)
    assert rmse(b, a) == base
    perm = rng.permutation(50)
    # permuting reorders the summation, so equality holds only to roundoff
    assert rmse(a[perm], b[perm]) == pytest.approx(base, rel=1e-12)
    assert rmse(a.reshape(5, 10), b.reshape(5, 10)) == base


def test_rmse_shape_mismatch():
    with pytest.raises(ShapeError):
        rmse(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# mape


def test_mape_exact_and_relative():
    p_true = np.array([10.0, 20.0])
    assert mape(np.array([10.0, 20.0]), p_true) == pytest.approx(0.0)
    got = mape(np.array([11.0, 18.0]), p_true)
    assert got == pytest.approx(100.0 * (0.1 + 0.1) / 2.0)


def test_mape_uses_median_over_leading_window():
    p_true = np.array([10.0])
    length = 400
    channel = np.full((1, length), 10.0)
    channel[0, MAPE_WINDOW:] = 1e6  # beyond the window, must be ignored
    assert mape(channel, p_true) == pytest.approx(0.0)
    spiky = np.full((1, 100), 10.0)
    spiky[0, :10] = 1e6  # minority spikes lose to the median
    assert mape(spiky, p_true) == pytest.approx(0.0)


def test_mape_short_series_uses_all_steps():
    p_true = np.array([10.0])
    channel = np.concatenate([np.full(5, 8.0), np.full(5, 12.0)]).reshape(1, 10)
    got = mape(channel, p_true)
    assert got == pytest.approx(100.0 * abs(np.median(channel[0]) - 10.0) / 10.0)


def test_mape_zero_true_parameter_rejected():
    with pytest.raises(ConfigError):
        mape(np.array([1.0]), np.array([0.0]))


# ---------------------------------------------------------------------------
# wilcoxon


def test_wilcoxon_all_positive_n5():
    pairs = np.array([[2.0, 1.0], [3.0, 1.5], [4.0, 2.0], [5.0, 2.5], [6.0, 3.0]])
    stat, p = wilcoxon_signed_rank(pairs)
    assert stat == 0.0
    assert p == pytest.approx(2.0 / 32.0)


def test_wilcoxon_antisymmetry():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(12)
    b = a + rng.standard_normal(12)
    stat_ab, p_ab = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    stat_ba, p_ba = wilcoxon_signed_rank(np.stack([b, a], axis=1))
    assert stat_ab == stat_ba
    assert p_ab == pytest.approx(p_ba, rel=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_wilcoxon_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 11))
    a = rng.standard_normal(n)
    b = a + 0.5 * rng.standard_normal(n)
    stat, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    assert p == pytest.approx(brute_force_two_sided_p(a - b), abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_wilcoxon_matches_scipy_exact(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(8, EXACT_MAX_N + 1))
    a = rng.standard_normal(n)
    b = a + 0.4 * rng.standard_normal(n)
    stat, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    ref = sps.wilcoxon(a, b, alternative="two-sided", method="exact")
    assert stat == pytest.approx(float(ref.statistic))
    assert p == pytest.approx(float(ref.pvalue), rel=1e-10)


def test_wilcoxon_handles_ties_exactly():
    # repeated |d| values force average ranks; scipy switches to its
    # normal approximation there, so check internal consistency instead
    a = np.array([3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    b = np.array([1.0, 2.0, 3.0, 8.0, 5.0, 6.0])
    d = a - b  # |d| = 2,2,2,2,2,2 all tied
    stat, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    assert 0.0 < p <= 1.0
    assert p == pytest.approx(brute_force_two_sided_p(d), abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_wilcoxon_matches_scipy_normal_approx(seed):
    rng = np.random.default_rng(200 + seed)
    n = 40
    a = rng.standard_normal(n)
    b = a + 0.3 * rng.standard_normal(n)
    stat, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    ref = sps.wilcoxon(a, b, alternative="two-sided", method="approx", correction=True)
    assert stat == pytest.approx(float(ref.statistic))
    assert p == pytest.approx(float(ref.pvalue), rel=1e-9)


def test_wilcoxon_null_false_positive_rate():
    rejections = 0
    trials = 200
    for seed in range(trials):
        rng = np.random.default_rng(5000 + seed)
        a = rng.standard_normal(15)
        b = a + rng.standard_normal(15)
        _, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
        rejections += p < 0.05
    # under the null the 5% test should reject rarely
    assert rejections / trials < 0.12


def test_wilcoxon_detects_consistent_shift():
    rng = np.random.default_rng(9)
    a = rng.standard_normal(20)
    b = a - 2.0
    _, p = wilcoxon_signed_rank(np.stack([a, b], axis=1))
    assert p < 1e-3


def test_wilcoxon_zero_diffs_dropped():
    pairs = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 1.0], [4.0, 1.0], [5.0, 1.0], [6.0, 1.0], [7.0, 1.0]])
    stat, p = wilcoxon_signed_rank(pairs)
    ref_stat, ref_p = wilcoxon_signed_rank(pairs[2:])
    assert stat == ref_stat
    assert p == ref_p


def test_wilcoxon_error_cases():
    with pytest.raises(ShapeError):
        wilcoxon_signed_rank(np.zeros((5, 3)))
    with pytest.raises(ConfigError):
        wilcoxon_signed_rank(np.array([[1.0, 2.0]] * 4))
    same = np.tile(np.array([[2.0, 2.0]]), (6, 1))
    with pytest.raises(EstimationError):
        wilcoxon_signed_rank(same)
