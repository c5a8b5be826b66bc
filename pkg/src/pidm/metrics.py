"""Evaluation metrics: sanitized RMSE, parameter MAPE, Wilcoxon signed-rank.

Reconstructions from diverged runs can carry NaN/Inf or astronomically
large values; every aggregate here sanitizes first so reported numbers stay
finite and comparable.  The Wilcoxon test uses the exact conditional
distribution (over sign flips of the observed ranks) for small samples and
a tie-corrected normal approximation with continuity correction above that.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, EstimationError, ShapeError

CLIP_LIMIT = 1e6
NONFINITE_SENTINEL = 999.0
EXACT_MAX_N = 25
MAPE_WINDOW = 300


def sanitize(values: np.ndarray) -> np.ndarray:
    """Replace NaN/Inf with the sentinel and clip the rest to +-CLIP_LIMIT."""
    arr = np.asarray(values, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(
            np.isfinite(arr),
            np.clip(arr, -CLIP_LIMIT, CLIP_LIMIT),
            NONFINITE_SENTINEL,
        )


def rmse(x_hat, x_true) -> float:
    """Root-mean-square error over all elements, sanitize-then-aggregate."""
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x_true, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("rmse", a.shape, b.shape)
    diff = sanitize(a) - sanitize(b)
    return float(np.sqrt(np.mean(diff**2)))


def mape(param_channels, p_true) -> np.ndarray:
    """Per-parameter absolute percentage error of the median estimate.

    param_channels is either [n_params, L] of denormalized parameter
    channels, reduced by the median over the first min(300, L) steps, or an
    already-pooled [n_params] vector used as-is.
    """
    p_true = np.asarray(p_true, dtype=np.float64)
    if np.any(p_true == 0.0):
        raise ConfigError("mape undefined for zero true parameters")
    chans = np.asarray(param_channels, dtype=np.float64)
    if chans.ndim == 2:
        if chans.shape[0] != p_true.shape[0]:
            raise ShapeError("mape", chans.shape, p_true.shape)
        p_hat = np.median(chans[:, : min(MAPE_WINDOW, chans.shape[1])], axis=1)
    elif chans.ndim == 1:
        if chans.shape != p_true.shape:
            raise ShapeError("mape", chans.shape, p_true.shape)
        p_hat = chans
    else:
        raise ShapeError("mape", chans.shape, p_true.shape)
    return 100.0 * np.abs(p_hat - p_true) / np.abs(p_true)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.shape[0], dtype=np.float64)
    i = 0
    while i < sorted_vals.shape[0]:
        j = i
        while j + 1 < sorted_vals.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks: np.ndarray, w_plus_doubled: int) -> float:
    """P(|W - M/2| >= |w - M/2|) over all 2^n equally likely sign patterns.

    Works on doubled ranks so tied (half-integer) average ranks stay exact
    integers.  The subset-sum count enumerates which differences land in
    the positive-rank sum.
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for dr in doubled_ranks:
        dr = int(dr)
        counts[dr:] += counts[: total + 1 - dr]
    center = total / 2.0
    dev = abs(w_plus_doubled - center)
    sums = np.arange(total + 1)
    tail = counts[np.abs(sums - center) >= dev - 1e-9].sum()
    return float(tail / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(pairs) -> tuple:
    """Two-tailed Wilcoxon signed-rank test on paired samples.

    pairs is [N, 2] (or a list of (a, b)).  Zero differences are dropped.
    Returns (statistic, p) where the statistic is the smaller of the
    positive- and negative-rank sums.  Exact distribution for up to 25
    nonzero differences, tie-corrected normal approximation with continuity
    correction beyond that.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError("wilcoxon_signed_rank", arr.shape)
    if arr.shape[0] < 5:
        raise ConfigError("wilcoxon needs at least 5 pairs")
    d = arr[:, 0] - arr[:, 1]
    d = d[d != 0.0]
    if d.shape[0] == 0:
        raise EstimationError("all differences are zero")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)
    n = d.shape[0]
    if n <= EXACT_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_two_sided_p(doubled, int(round(2.0 * w_plus)))
    else:
        mu = ranks.sum() / 2.0
        sigma = math.sqrt(float((ranks**2).sum())) / 2.0
        dev = abs(w_plus - mu)
        z = max(dev - 0.5, 0.0) / sigma
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return statistic, float(p)
