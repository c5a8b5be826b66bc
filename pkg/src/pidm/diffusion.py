"""Forward noising schedule and ancestral reverse sampling.

Linear beta schedule; epsilon-prediction convention throughout.  The
reverse update shared by the plain sampler and the guided sampler lives
here so both consume the random stream identically and agree bitwise
when guidance is inactive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha_bar arrays; index t-1 holds step t."""

    n_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def linear(cls, n_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if n_steps < 1:
            raise ValueError(f"n_steps must be positive, got {n_steps}")
        beta = np.linspace(beta_start, beta_end, n_steps)
        alpha = 1.0 - beta
        return cls(n_steps=n_steps, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))

    def beta_at(self, t: int) -> float:
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"t must be in [1, {self.n_steps}], got {t}")
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"t must be in [1, {self.n_steps}], got {t}")
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction; t = 0 denotes the clean data (exactly 1)."""
        if not 0 <= t <= self.n_steps:
            raise ValueError(f"t must be in [0, {self.n_steps}], got {t}")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Marginal forward draw x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t may be a scalar step or an integer array matching x0's batch axis.
    """
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        ab = schedule.alpha_bar_at(int(t_arr))
    else:
        ab = schedule.alpha_bar[t_arr - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior mean of the epsilon-parameterized ancestral step."""
    beta = schedule.beta_at(t)
    ab = schedule.alpha_bar_at(t)
    return (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha_at(t))


def reverse_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One ancestral step; no noise is injected on the final step (t == 1)."""
    mu = reverse_mean(x_t, eps_hat, t, schedule)
    if t == 1:
        return mu
    z = rng.standard_normal(x_t.shape)
    return mu + np.sqrt(schedule.beta_at(t)) * z


def ancestral_sample(eps_fn, schedule: NoiseSchedule, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Plain (unguided) DDPM sampling from pure noise.

    eps_fn(x, t) must return the predicted noise for a single sample of the
    given shape.
    """
    x = rng.standard_normal(shape)
    for t in range(schedule.n_steps, 0, -1):
        x = reverse_step(x, eps_fn(x, t), t, schedule, rng)
    return x
