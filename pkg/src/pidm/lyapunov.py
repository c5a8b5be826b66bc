"""Maximal Lyapunov exponent estimation via the Rosenstein method.

A scalar series (first state component) is delay-embedded, each embedded
point is paired with its nearest neighbour outside a temporal exclusion
band, and the mean log distance of those pairs is tracked over a fixed
horizon.  The least-squares slope of that curve against time is the
exponent.  The estimate averages over non-overlapping trajectory windows,
dropping to fewer windows when the trajectory cannot support the embedding
and tracking geometry inside each one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EstimationError
from .systems import SystemSpec

# Distances can collapse to exactly zero on periodic or duplicated data;
# flooring keeps the log finite without disturbing non-degenerate pairs.
_DIST_FLOOR = 1e-300


@dataclass(frozen=True)
class EmbeddingConfig:
    """Delay-embedding and divergence-tracking settings."""

    m: int
    tau: int
    m_sep: int
    tlen: int
    n_windows: int = 3

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigError("embedding dimension m must be >= 1")
        if self.tau < 1:
            raise ConfigError("delay tau must be >= 1")
        if self.m_sep < 0:
            raise ConfigError("exclusion window m_sep must be >= 0")
        if self.tlen < 2:
            raise ConfigError("tracking length tlen must be >= 2")
        if self.n_windows < 1:
            raise ConfigError("n_windows must be >= 1")


@dataclass(frozen=True)
class LyapunovEstimate:
    """Slope estimate with the fit interval and regression quality."""

    lambda_max: float
    fit_range: tuple
    r2: float
    per_window: tuple


def config_for(system: SystemSpec) -> EmbeddingConfig:
    """Embedding settings bundled with a benchmark system."""
    ls = system.lyap
    return EmbeddingConfig(ls.embed_dim, ls.delay, ls.theiler, ls.track_len)


def delay_embed(series, cfg: EmbeddingConfig) -> np.ndarray:
    """Delay vectors [L - (m-1)*tau, m] from a scalar series [L]."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError(f"delay_embed expects a 1-D series, got shape {x.shape}")
    span = (cfg.m - 1) * cfg.tau
    if x.shape[0] <= span:
        raise EstimationError(
            f"series of length {x.shape[0]} too short for m={cfg.m}, tau={cfg.tau}"
        )
    n = x.shape[0] - span
    idx = np.arange(n)[:, None] + np.arange(cfg.m)[None, :] * cfg.tau
    return x[idx]


def _window_curve(x: np.ndarray, cfg: EmbeddingConfig):
    """Mean log-divergence curve over k=1..tlen for one window, else None.

    None signals that the window is too short for the embedding, leaves no
    reference points with a full tracking horizon, or has no neighbour pair
    outside the exclusion band.
    """
    span = (cfg.m - 1) * cfg.tau
    if x.shape[0] <= span:
        return None
    emb = delay_embed(x, cfg)
    n_ref = emb.shape[0] - cfg.tlen
    if n_ref < 2:
        return None
    ref = emb[:n_ref]
    d0 = np.sqrt(((ref[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2))
    offsets = np.arange(n_ref)
    d0[np.abs(offsets[:, None] - offsets[None, :]) <= cfg.m_sep] = np.inf
    nn = d0.argmin(axis=1)
    valid = np.isfinite(d0[offsets, nn])
    if not valid.any():
        return None
    i_idx = offsets[valid]
    j_idx = nn[valid]
    ks = np.arange(1, cfg.tlen + 1)
    a = emb[i_idx[:, None] + ks[None, :]]
    b = emb[j_idx[:, None] + ks[None, :]]
    dists = np.sqrt(((a - b) ** 2).sum(axis=2))
    return np.log(np.maximum(dists, _DIST_FLOOR)).mean(axis=0)


def _fit_slope(mean_log: np.ndarray, dt: float) -> tuple:
    """OLS slope of the divergence curve against time, with its r^2."""
    t = np.arange(1, mean_log.shape[0] + 1) * dt
    design = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(design, mean_log, rcond=None)
    resid = mean_log - design @ coef
    ss_res = float((resid**2).sum())
    ss_tot = float(((mean_log - mean_log.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), r2


def rosenstein_mle(trajectory, dt: float, cfg: EmbeddingConfig) -> LyapunovEstimate:
    """Maximal Lyapunov exponent of a trajectory sampled at interval dt.

    The embedding is built from the first state component.  The trajectory
    splits into cfg.n_windows contiguous windows and the per-window slopes
    are averaged; when any window is too short for the geometry the count
    drops until every window works, down to a single full-length window.
    """
    cfg.validate()
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.tlen < 5:
        raise EstimationError("divergence fit needs at least 5 horizons (tlen >= 5)")
    traj = np.asarray(trajectory, dtype=np.float64)
    x_full = traj if traj.ndim == 1 else traj[:, 0]

    for count in range(cfg.n_windows, 0, -1):
        curves = [_window_curve(w, cfg) for w in np.array_split(x_full, count)]
        if all(c is not None for c in curves):
            break
    else:
        raise EstimationError(
            "no trajectory window supports the requested embedding; "
            f"L={x_full.shape[0]}, m={cfg.m}, tau={cfg.tau}, "
            f"m_sep={cfg.m_sep}, tlen={cfg.tlen}"
        )

    fits = [_fit_slope(c, dt) for c in curves]
    slopes = tuple(s for s, _ in fits)
    r2s = [r for _, r in fits]
    return LyapunovEstimate(
        lambda_max=float(np.mean(slopes)),
        fit_range=(1, cfg.tlen),
        r2=float(np.mean(r2s)),
        per_window=slopes,
    )
