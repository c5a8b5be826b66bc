"""Trajectory corpora, channel normalization, and sparse observations.

A corpus holds joint arrays Z of shape [N, C, L] where the first `dim`
channels are the state trajectory and the remaining channels repeat the
generating parameters at every time index.  Normalization maps each
channel to [-1, 1] using min/max taken over the corpus itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .container import read_container, write_container
from .errors import ContainerError, CorpusError
from .systems import SystemSpec, get_system

NORM_EPS = 1e-8


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max recorded from the training corpus."""

    z_min: np.ndarray
    z_max: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.z_max - self.z_min + NORM_EPS

    def normalize(self, z: np.ndarray) -> np.ndarray:
        """Map [C, L] (or [N, C, L], or [C]) physical values into [-1, 1] per channel."""
        return self._apply(z, forward=True)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return self._apply(z, forward=False)

    def _apply(self, z: np.ndarray, forward: bool) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            lo, span = self.z_min, self.span
        else:
            lo, span = self.z_min[:, None], self.span[:, None]
        if forward:
            return 2.0 * (z - lo) / span - 1.0
        return lo + (z + 1.0) * span / 2.0

    def denormalize_tensor(self, x: Tensor) -> Tensor:
        """Tape-differentiable inverse map for [C, L] tensors."""
        c, length = x.data.shape
        span = np.tile((self.span / 2.0)[:, None], (1, length))
        lo = np.tile(self.z_min[:, None], (1, length))
        return ad.add(ad.mul(ad.add(x, 1.0), Tensor(span)), Tensor(lo))

    @classmethod
    def from_corpus(cls, z: np.ndarray) -> "NormStats":
        """z: [N, C, L]; min/max per channel over trajectories and time."""
        return cls(z_min=z.min(axis=(0, 2)), z_max=z.max(axis=(0, 2)))


@dataclass
class TrajectorySet:
    """Raw corpus plus its normalization stats."""

    system: str
    condition: str
    dt: float
    z_raw: np.ndarray  # [N, C, L] physical units
    params: np.ndarray  # [N, n_params]
    stats: NormStats
    seed: int | None = None
    _normalized: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_traj(self) -> int:
        return self.z_raw.shape[0]

    @property
    def length(self) -> int:
        return self.z_raw.shape[2]

    @property
    def z_normalized(self) -> np.ndarray:
        if self._normalized is None:
            self._normalized = self.stats.normalize(self.z_raw)
        return self._normalized


@dataclass(frozen=True)
class ObservationSet:
    """Sparse noisy observations of the state channels, in normalized units."""

    indices: np.ndarray  # [n_obs] sorted time indices
    values: np.ndarray  # [n_obs, dim]
    length: int
    sigma: float

    @property
    def n_obs(self) -> int:
        return int(self.indices.size)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.length, dtype=bool)
        m[self.indices] = True
        return m


def make_joint(states: np.ndarray, params: np.ndarray) -> np.ndarray:
    """states [L, dim] + params [n_params] -> joint [dim + n_params, L]."""
    length = states.shape[0]
    param_channels = np.repeat(np.asarray(params, dtype=np.float64)[:, None], length, axis=1)
    return np.concatenate([states.T, param_channels], axis=0)


def generate_corpus(
    system: SystemSpec,
    n_traj: int,
    length: int,
    rng: np.random.Generator,
    condition: str = "id",
    transient: int = 700,
    seed: int | None = None,
) -> TrajectorySet:
    """Integrate trajectories, discard the transient, reject amplitude escapes.

    Rejected candidates are resampled with fresh parameters and initial
    conditions; more than 100 consecutive rejections abort with CorpusError.
    """
    if n_traj < 1 or length < 2:
        raise ValueError(f"need n_traj >= 1 and length >= 2, got {n_traj}, {length}")
    total_steps = transient + length - 1
    h = system.dt / system.gt_substeps
    kept_z: list[np.ndarray] = []
    kept_p: list[np.ndarray] = []
    consecutive_rejects = 0
    while len(kept_z) < n_traj:
        want = n_traj - len(kept_z)
        params = system.sample_params(rng, condition, size=want)
        state = system.sample_initial(rng, params, size=want)
        traj = np.empty((want, length, system.dim), dtype=np.float64)
        alive = np.ones(want, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(1, total_steps + 1):
                for _ in range(system.gt_substeps):
                    state = _dp45_increment(system, state, params, h)
                finite = np.all(np.isfinite(state), axis=1)
                state_checked = np.where(finite[:, None], state, 0.0)
                inside = finite & (np.max(np.abs(state_checked), axis=1) <= system.amp_bound)
                alive &= inside
                state = np.where(alive[:, None], state, 0.0)
                if step >= transient:
                    traj[:, step - transient] = state
                if not alive.any():
                    break
        n_new = int(alive.sum())
        if n_new == 0:
            consecutive_rejects += want
        else:
            consecutive_rejects = 0
            for i in np.flatnonzero(alive):
                kept_z.append(make_joint(traj[i], params[i]))
                kept_p.append(params[i])
        if consecutive_rejects > 100:
            raise CorpusError(
                f"{system.name}/{condition}: more than 100 consecutive trajectory "
                f"rejections against amplitude bound {system.amp_bound}"
            )
    z = np.stack(kept_z[:n_traj], axis=0)
    p = np.stack(kept_p[:n_traj], axis=0)
    return TrajectorySet(
        system=system.name,
        condition=condition,
        dt=system.dt,
        z_raw=z,
        params=p,
        stats=NormStats.from_corpus(z),
        seed=seed,
    )


def _dp45_increment(system, state, params, h):
    # local import keeps dataset importable without pulling the tape machinery
    from .integrator import dp45_step

    return dp45_step(system, state, params, h, validate=False)


def make_observations(
    z_normalized: np.ndarray,
    dim: int,
    density: float,
    sigma: float,
    rng: np.random.Generator,
) -> ObservationSet:
    """Pick round(density * L) time indices without replacement, add N(0, sigma^2).

    z_normalized: joint [C, L] in normalized units; observations cover the
    state channels only.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    length = z_normalized.shape[1]
    count = int(round(density * length))
    idx = np.sort(rng.choice(length, size=count, replace=False))
    clean = z_normalized[:dim, idx].T.copy()
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape) if sigma > 0 else clean
    return ObservationSet(indices=idx, values=noisy, length=length, sigma=sigma)


# ---------------------------------------------------------------------------
# container adapters


def save_trajectories(path: str, corpus: TrajectorySet) -> None:
    meta = {
        "kind": "trajectories",
        "system": corpus.system,
        "condition": corpus.condition,
        "dt": corpus.dt,
        "seed": corpus.seed,
    }
    write_container(
        path,
        meta,
        {
            "z_raw": corpus.z_raw,
            "params": corpus.params,
            "z_min": corpus.stats.z_min,
            "z_max": corpus.stats.z_max,
        },
    )


def load_trajectories(path: str) -> TrajectorySet:
    meta, arrays = read_container(path)
    if meta.get("kind") != "trajectories":
        raise ContainerError(f"{path}: expected a trajectories container, got {meta.get('kind')!r}")
    return TrajectorySet(
        system=meta["system"],
        condition=meta["condition"],
        dt=float(meta["dt"]),
        z_raw=arrays["z_raw"],
        params=arrays["params"],
        stats=NormStats(z_min=arrays["z_min"], z_max=arrays["z_max"]),
        seed=meta.get("seed"),
    )


def save_observations(
    path: str,
    obs: ObservationSet,
    system: str,
    extra: dict | None = None,
    extra_arrays: dict | None = None,
) -> None:
    meta = {"kind": "observations", "system": system, "sigma": obs.sigma, "length": obs.length}
    if extra:
        meta.update(extra)
    arrays = {"indices": obs.indices.astype(np.float64), "values": obs.values}
    if extra_arrays:
        arrays.update(extra_arrays)
    write_container(path, meta, arrays)


def load_observations(path: str) -> tuple[ObservationSet, dict, dict]:
    """Returns (observations, meta, extra arrays beyond indices/values)."""
    meta, arrays = read_container(path)
    if meta.get("kind") != "observations":
        raise ContainerError(f"{path}: expected an observations container, got {meta.get('kind')!r}")
    obs = ObservationSet(
        indices=arrays["indices"].astype(np.int64),
        values=arrays["values"],
        length=int(meta["length"]),
        sigma=float(meta["sigma"]),
    )
    extra = {k: v for k, v in arrays.items() if k not in ("indices", "values")}
    return obs, meta, extra


def corpus_for(name: str) -> SystemSpec:
    return get_system(name)
