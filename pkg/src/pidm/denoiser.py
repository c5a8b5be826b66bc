"""Temporal 1D U-Net noise predictor.

Three encoder stages at channel multipliers (1, 2, 4) with 2x average
pooling between them, a two-block bottleneck, and a symmetric decoder
with nearest-neighbour upsampling and additive skip connections.  Step
information enters every residual block as a learned bias computed from
a sinusoidal embedding passed through a two-layer MLP.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int
    length: int
    base_channels: int = 16
    channel_mults: tuple = (1, 2, 4)
    time_embed_dim: int = 32
    groups: int = 8
    use_attention: bool = False

    def validate(self) -> None:
        if self.length % 4 != 0:
            raise ConfigError(
                f"trajectory length must be divisible by 4 for two pooling stages, got {self.length}"
            )
        if self.time_embed_dim % 2 != 0:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.use_attention:
            raise ConfigError("attention blocks are not available in the desk-scale network")
        if len(self.channel_mults) != 3:
            raise ConfigError(f"expected exactly 3 channel multipliers, got {self.channel_mults}")
        for mult in self.channel_mults:
            if (self.base_channels * mult) % self.groups != 0:
                raise ConfigError(
                    f"stage width {self.base_channels * mult} not divisible by {self.groups} groups"
                )


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Sin/cos features over a geometric frequency ladder; t: int array [B]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int) -> None:
        self.w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}


class Conv1d:
    def __init__(
        self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int, zero_init: bool = False
    ) -> None:
        if zero_init:
            w = np.zeros((c_out, c_in, kernel))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (c_in * kernel)), (c_out, c_in, kernel))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.w, self.b)

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}


class GroupNorm:
    def __init__(self, channels: int, groups: int) -> None:
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return ad.group_norm(x, self.gamma, self.beta, self.groups)

    def params(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}


class ResBlock1D:
    """conv3-GN-SiLU twice, a step-embedding bias between them, residual add."""

    def __init__(
        self, rng: np.random.Generator, c_in: int, c_out: int, temb_dim: int, groups: int
    ) -> None:
        self.norm1 = GroupNorm(c_in, groups)
        self.conv1 = Conv1d(rng, c_in, c_out, 3)
        self.time_proj = Linear(rng, temb_dim, c_out)
        self.norm2 = GroupNorm(c_out, groups)
        self.conv2 = Conv1d(rng, c_out, c_out, 3)
        self.skip = Conv1d(rng, c_in, c_out, 1) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(ad.silu(self.norm1(x)))
        bias = self.time_proj(ad.silu(temb))
        h = ad.add(h, ad.broadcast_last(bias, h.data.shape[-1]))
        h = self.conv2(ad.silu(self.norm2(h)))
        shortcut = self.skip(x) if self.skip is not None else x
        return ad.add(h, shortcut)

    def params(self) -> dict:
        out = {}
        children = {
            "norm1": self.norm1,
            "conv1": self.conv1,
            "time_proj": self.time_proj,
            "norm2": self.norm2,
            "conv2": self.conv2,
        }
        if self.skip is not None:
            children["skip"] = self.skip
        for name, child in children.items():
            for key, value in child.params().items():
                out[f"{name}.{key}"] = value
        return out


class Denoiser:
    """Epsilon predictor over joint state+parameter channel stacks."""

    def __init__(self, config: DenoiserConfig, rng: np.random.Generator) -> None:
        config.validate()
        self.config = config
        ted = config.time_embed_dim
        w0, w1, w2 = [config.base_channels * m for m in config.channel_mults]
        g = config.groups
        self.time_mlp1 = Linear(rng, ted, ted)
        self.time_mlp2 = Linear(rng, ted, ted)
        self.stem = Conv1d(rng, config.channels, w0, 3)
        self.enc1a = ResBlock1D(rng, w0, w0, ted, g)
        self.enc1b = ResBlock1D(rng, w0, w0, ted, g)
        self.enc2a = ResBlock1D(rng, w0, w1, ted, g)
        self.enc2b = ResBlock1D(rng, w1, w1, ted, g)
        self.enc3a = ResBlock1D(rng, w1, w2, ted, g)
        self.enc3b = ResBlock1D(rng, w2, w2, ted, g)
        self.mid1 = ResBlock1D(rng, w2, w2, ted, g)
        self.mid2 = ResBlock1D(rng, w2, w2, ted, g)
        self.dec2a = ResBlock1D(rng, w2, w1, ted, g)
        self.dec2b = ResBlock1D(rng, w1, w1, ted, g)
        self.dec1a = ResBlock1D(rng, w1, w0, ted, g)
        self.dec1b = ResBlock1D(rng, w0, w0, ted, g)
        self.head_norm = GroupNorm(w0, g)
        self.head = Conv1d(rng, w0, config.channels, 1, zero_init=True)

    def _modules(self) -> dict:
        return {
            "time_mlp1": self.time_mlp1,
            "time_mlp2": self.time_mlp2,
            "stem": self.stem,
            "enc1a": self.enc1a,
            "enc1b": self.enc1b,
            "enc2a": self.enc2a,
            "enc2b": self.enc2b,
            "enc3a": self.enc3a,
            "enc3b": self.enc3b,
            "mid1": self.mid1,
            "mid2": self.mid2,
            "dec2a": self.dec2a,
            "dec2b": self.dec2b,
            "dec1a": self.dec1a,
            "dec1b": self.dec1b,
            "head_norm": self.head_norm,
            "head": self.head,
        }

    def parameters(self) -> dict:
        out = {}
        for name, module in self._modules().items():
            for key, value in module.params().items():
                out[f"{name}.{key}"] = value
        return out

    def forward(self, x: Tensor, t) -> Tensor:
        """x: Tensor [B, C, L] with L divisible by 4; t: int array [B]."""
        if x.data.ndim != 3 or x.data.shape[1] != self.config.channels:
            raise ConfigError(
                f"expected input [B, {self.config.channels}, L], got {x.data.shape}"
            )
        if x.data.shape[-1] % 4 != 0:
            raise ConfigError(f"input length {x.data.shape[-1]} not divisible by 4")
        temb = Tensor(sinusoidal_embedding(t, self.config.time_embed_dim))
        temb = self.time_mlp2(ad.silu(self.time_mlp1(temb)))
        h0 = self.stem(x)
        e1 = self.enc1b(self.enc1a(h0, temb), temb)
        e2 = self.enc2b(self.enc2a(ad.avg_pool2(e1), temb), temb)
        e3 = self.enc3b(self.enc3a(ad.avg_pool2(e2), temb), temb)
        m = self.mid2(self.mid1(e3, temb), temb)
        u2 = self.dec2a(ad.upsample2(m), temb)
        u2 = self.dec2b(ad.add(u2, e2), temb)
        u1 = self.dec1a(ad.upsample2(u2), temb)
        u1 = self.dec1b(ad.add(u1, e1), temb)
        return self.head(ad.silu(self.head_norm(u1)))
