"""Deterministic per-trial random substreams.

Experiments key every stochastic role (ground truth, observations,
sampling noise, filter noise) off a single master seed so that paired
methods see identical inputs and reruns are bit-reproducible.
"""
from __future__ import annotations

import zlib

import numpy as np


def _role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def substream(master_seed: int, *key) -> np.random.Generator:
    """Return a Generator for (master_seed, key...).

    Integer key parts are used as-is; strings are hashed with crc32 so the
    spawn key stays stable across runs and platforms.
    """
    parts = tuple(_role_key(k) if isinstance(k, str) else int(k) for k in key)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=parts))
