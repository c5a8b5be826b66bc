"""Denoiser training: decoupled-weight-decay Adam, cosine decay, grad clip.

train_denoiser consumes a trajectory corpus and returns a DenoiserModel
that bundles the network with its noise schedule, normalization stats,
and source system so downstream sampling needs nothing else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .container import read_container, write_container
from .dataset import NormStats, TrajectorySet
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import NoiseSchedule, q_sample
from .errors import ContainerError, TrainingDiverged


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    batch_size: int = 16
    lr: float = 2e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    diffusion_steps: int = 200
    base_channels: int = 16
    time_embed_dim: int = 32
    seed: int = 0


class AdamW:
    """Adam with decoupled weight decay applied directly to the parameters."""

    def __init__(self, params: dict, cfg: TrainConfig) -> None:
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for key, p in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + 1e-8)
            p.data -= lr * (update + cfg.weight_decay * p.data)


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    if total <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / (total - 1)))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class DenoiserModel:
    """Trained denoiser plus everything sampling needs."""

    def __init__(
        self,
        net: Denoiser,
        schedule: NoiseSchedule,
        stats: NormStats,
        system: str,
        dt: float,
        loss_history: list | None = None,
    ) -> None:
        self.net = net
        self.schedule = schedule
        self.stats = stats
        self.system = system
        self.dt = dt
        self.loss_history = loss_history or []

    def predict_eps(self, x: np.ndarray, t: int) -> np.ndarray:
        """Noise prediction for a single [C, L] sample, no tape recording.

        Callers embedding this inside a guidance tape must invoke it outside
        the tape context so the network weights stay frozen.
        """
        out = self.net.forward(Tensor(x[None]), np.array([t]))
        return out.data[0]

    def save(self, path: str) -> None:
        cfg = self.net.config
        meta = {
            "kind": "weights",
            "system": self.system,
            "dt": self.dt,
            "channels": cfg.channels,
            "length": cfg.length,
            "base_channels": cfg.base_channels,
            "channel_mults": list(cfg.channel_mults),
            "time_embed_dim": cfg.time_embed_dim,
            "groups": cfg.groups,
            "diffusion_steps": self.schedule.n_steps,
            "beta_start": float(self.schedule.beta[0]),
            "beta_end": float(self.schedule.beta[-1]),
            "final_loss": float(self.loss_history[-1]) if self.loss_history else None,
        }
        arrays = {f"w.{k}": p.data for k, p in self.net.parameters().items()}
        arrays["z_min"] = self.stats.z_min
        arrays["z_max"] = self.stats.z_max
        write_container(path, meta, arrays)

    @classmethod
    def load(cls, path: str) -> "DenoiserModel":
        meta, arrays = read_container(path)
        if meta.get("kind") != "weights":
            raise ContainerError(f"{path}: expected a weights container, got {meta.get('kind')!r}")
        cfg = DenoiserConfig(
            channels=int(meta["channels"]),
            length=int(meta["length"]),
            base_channels=int(meta["base_channels"]),
            channel_mults=tuple(meta["channel_mults"]),
            time_embed_dim=int(meta["time_embed_dim"]),
            groups=int(meta["groups"]),
        )
        net = Denoiser(cfg, np.random.default_rng(0))
        params = net.parameters()
        for key, p in params.items():
            stored = arrays.get(f"w.{key}")
            if stored is None or stored.shape != p.data.shape:
                raise ContainerError(f"{path}: missing or mis-shaped weight {key!r}")
            p.data[...] = stored
        schedule = NoiseSchedule.linear(
            int(meta["diffusion_steps"]), float(meta["beta_start"]), float(meta["beta_end"])
        )
        stats = NormStats(z_min=arrays["z_min"], z_max=arrays["z_max"])
        return cls(net, schedule, stats, meta["system"], float(meta["dt"]))


def train_denoiser(
    corpus: TrajectorySet, cfg: TrainConfig | None = None, **overrides
) -> DenoiserModel:
    """Train an epsilon predictor on the corpus; deterministic for a fixed seed.

    A non-finite loss aborts with TrainingDiverged carrying the recent loss
    tail for diagnosis.
    """
    cfg = cfg or TrainConfig()
    if overrides:
        cfg = replace(cfg, **overrides)
    z = corpus.z_normalized
    n_traj, channels, length = z.shape
    rng = np.random.default_rng(cfg.seed)
    schedule = NoiseSchedule.linear(cfg.diffusion_steps)
    net = Denoiser(
        DenoiserConfig(
            channels=channels,
            length=length,
            base_channels=cfg.base_channels,
            time_embed_dim=cfg.time_embed_dim,
        ),
        rng,
    )
    params = net.parameters()
    opt = AdamW(params, cfg)
    losses: list[float] = []
    for step in range(cfg.steps):
        idx = rng.integers(0, n_traj, size=cfg.batch_size)
        t = rng.integers(1, schedule.n_steps + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, channels, length))
        x_t = q_sample(z[idx], t, eps, schedule)
        with Tape() as tape:
            pred = net.forward(Tensor(x_t), t)
            loss = ad.mse(pred, Tensor(eps))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, losses[-10:])
            tape.backward(loss)
        grads = {k: p.grad for k, p in params.items()}
        clip_global_norm(grads, cfg.grad_clip)
        opt.step(grads, cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min))
        losses.append(value)
    return DenoiserModel(net, schedule, corpus.stats, corpus.system, corpus.dt, losses)
