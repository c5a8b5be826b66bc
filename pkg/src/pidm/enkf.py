"""Ensemble Kalman filter baseline with oracle dynamics.

The filter propagates an ensemble with classical RK4 between observation
times and applies a perturbed-observation analysis whenever a (full-state,
noisy) observation is available. Safeguards for stiff systems: per-stage
derivative clipping, optional per-step state clipping, and re-drawing of
members that left the finite range.

Parameters are held at their true values by default (the filter acts as an
oracle baseline); an augmented mode carries per-member parameter columns
that the analysis updates through cross-covariances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FilterDivergence
from .systems import SystemSpec


@dataclass(frozen=True)
class EnkfConfig:
    n_members: int = 50
    sigma_init: float = 2.0
    param_noise_frac: float = 0.30
    inflation: float = 1.02
    reg_eps: float = 1e-4
    prop_dt: float = 0.05
    deriv_clip: float = 1e6
    state_clip: float | None = None
    sigma_obs: float = 0.05
    augment_params: bool = False

    def validate(self) -> None:
        if self.n_members < 2:
            raise ValueError("need at least two ensemble members")
        if self.inflation < 1.0:
            raise ValueError("inflation must be >= 1")


class Ensemble:
    """Member matrix [N_e, D] with mean/anomaly views."""

    def __init__(self, members: np.ndarray) -> None:
        self.members = np.asarray(members, dtype=np.float64)

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def anomalies(self) -> np.ndarray:
        return self.members - self.mean


def rk4_step(
    system: SystemSpec,
    state: np.ndarray,
    params: np.ndarray,
    dt: float,
    deriv_clip: float = 1e6,
) -> np.ndarray:
    """Classical RK4 with each stage derivative clipped to +-deriv_clip.

    state may be a single vector or a batch [N, D]; params may be shared
    [D_p] or per-member [N, D_p].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(x):
        with np.errstate(over="ignore", invalid="ignore"):
            d = system.field_np(x, params)
        # clip catches +-inf but lets NaN through so blown members get flagged
        return np.clip(d, -deriv_clip, deriv_clip)

    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def analysis(
    members: np.ndarray,
    y: np.ndarray,
    r_diag: np.ndarray,
    rng: np.random.Generator,
    inflation: float = 1.02,
    reg_eps: float = 1e-4,
    obs_dim: int | None = None,
) -> np.ndarray:
    """Perturbed-observation Kalman update with H = identity on the state.

    members is [N_e, D_a] where the first obs_dim columns are observed
    (obs_dim defaults to the full width). Anomalies are inflated before the
    covariance estimate; reg_eps stabilizes the innovation inverse.
    """
    members = np.asarray(members, dtype=np.float64)
    n, d_aug = members.shape
    d = obs_dim if obs_dim is not None else d_aug
    mean = members.mean(axis=0)
    anoms = (members - mean) * inflation
    members = mean + anoms
    cov = anoms.T @ anoms / (n - 1)
    cov[np.diag_indices(d_aug)] += reg_eps
    innov_cov = cov[:d, :d] + np.diag(r_diag)
    # gain K = cov[:, :d] @ inv(innov_cov); apply as members += innov @ K.T
    kt = np.linalg.solve(innov_cov, cov[:d, :])
    eta = rng.standard_normal((n, d)) * np.sqrt(r_diag)
    innovation = y + eta - members[:, :d]
    return members + innovation @ kt


@dataclass
class FilterResult:
    estimate: np.ndarray  # [L, D] ensemble-mean state trajectory
    rmse_obs: float
    analysis_records: list = field(default_factory=list)
    member_abs_max: float = 0.0
    reinit_count: int = 0
    param_estimate: np.ndarray | None = None


def run_filter(
    system: SystemSpec,
    obs_indices: np.ndarray,
    obs_values: np.ndarray,
    params: np.ndarray,
    length: int,
    cfg: EnkfConfig,
    rng: np.random.Generator,
    x0_mean: np.ndarray | None = None,
    r_diag: np.ndarray | None = None,
) -> FilterResult:
    """Filter a physical-unit observation sequence on a fixed dt grid.

    obs_indices are positions on the trajectory grid (dt = cfg.prop_dt);
    obs_values are full-state vectors in physical units. x0_mean defaults
    to the earliest observation. r_diag defaults to sigma_obs^2 per channel.
    """
    cfg.validate()
    obs_indices = np.asarray(obs_indices, dtype=np.intp)
    obs_values = np.asarray(obs_values, dtype=np.float64)
    d = system.dim
    n = cfg.n_members
    params = np.asarray(params, dtype=np.float64)
    if r_diag is None:
        r_diag = np.full(d, cfg.sigma_obs**2)
    obs_at = {int(i): obs_values[k] for k, i in enumerate(obs_indices)}

    if x0_mean is None:
        if len(obs_indices) == 0:
            raise ValueError("need observations or x0_mean to initialize")
        x0_mean = obs_values[np.argmin(obs_indices)]
    members = x0_mean + cfg.sigma_init * rng.standard_normal((n, d))
    if cfg.augment_params:
        widths = np.array([hi - lo for lo, hi in system.id_ranges])
        member_params = params + cfg.param_noise_frac * widths * rng.standard_normal(
            (n, params.size)
        )
        members = np.concatenate([members, member_params], axis=1)

    def state_of(m):
        return m[:, :d]

    def clip_state(m):
        if cfg.state_clip is None:
            return m
        norms = np.linalg.norm(m[:, :d], axis=1, keepdims=True)
        scale = np.where(norms > cfg.state_clip, cfg.state_clip / np.maximum(norms, 1e-300), 1.0)
        m = m.copy()
        m[:, :d] *= scale
        return m

    def reinit_blown(m, step):
        bad = ~np.all(np.isfinite(m), axis=1)
        if not bad.any():
            return m, 0
        if bad.all():
            raise FilterDivergence(step)
        healthy_mean = m[~bad].mean(axis=0)
        fresh = np.tile(healthy_mean, (int(bad.sum()), 1))
        fresh[:, :d] += cfg.sigma_init * rng.standard_normal((fresh.shape[0], d))
        m = m.copy()
        m[bad] = fresh
        return m, int(bad.sum())

    members = clip_state(members)
    estimate = np.zeros((length, d))
    records: list = []
    reinits = 0
    abs_max = float(np.max(np.linalg.norm(members[:, :d], axis=1)))

    def apply_analysis(m, y, step):
        mean_f = m[:, :d].mean(axis=0)
        m = analysis(m, y, r_diag, rng, cfg.inflation, cfg.reg_eps, obs_dim=d)
        mean_a = m[:, :d].mean(axis=0)
        records.append(
            {"index": step, "y": y.copy(), "mean_forecast": mean_f, "mean_analysis": mean_a}
        )
        return m

    if 0 in obs_at:
        members = apply_analysis(members, obs_at[0], 0)
    estimate[0] = members[:, :d].mean(axis=0)

    for step in range(1, length):
        prop_params = members[:, d:] if cfg.augment_params else params
        new_state = rk4_step(system, state_of(members), prop_params, cfg.prop_dt, cfg.deriv_clip)
        members = np.concatenate([new_state, members[:, d:]], axis=1)
        members, nre = reinit_blown(members, step)
        reinits += nre
        members = clip_state(members)
        if step in obs_at:
            members = apply_analysis(members, obs_at[step], step)
            members, nre = reinit_blown(members, step)
            reinits += nre
        estimate[step] = members[:, :d].mean(axis=0)
        abs_max = max(abs_max, float(np.max(np.linalg.norm(members[:, :d], axis=1))))

    if len(obs_indices):
        diffs = estimate[obs_indices] - obs_values
        rmse_obs = float(np.sqrt(np.mean(diffs**2)))
    else:
        rmse_obs = float("nan")
    param_est = members[:, d:].mean(axis=0) if cfg.augment_params else None
    return FilterResult(
        estimate=estimate,
        rmse_obs=rmse_obs,
        analysis_records=records,
        member_abs_max=abs_max,
        reinit_count=reinits,
        param_estimate=param_est,
    )
