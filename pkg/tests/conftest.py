"""Shared fixtures: a tiny corpus and model sized for fast unit tests.

Acceptance tests build their own desk-scale artifacts; everything else
uses these miniatures so the default suite stays quick.
"""
import numpy as np
import pytest

from pidm.dataset import generate_corpus
from pidm.systems import get_system
from pidm.training import TrainConfig, train_denoiser


@pytest.fixture(scope="session")
def tiny_corpus():
    system = get_system("lorenz")
    return generate_corpus(system, 8, 64, np.random.default_rng(3), seed=3)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    cfg = TrainConfig(steps=300, lr=3e-3, diffusion_steps=50, batch_size=8)
    return train_denoiser(tiny_corpus, cfg)
