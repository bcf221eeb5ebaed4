"""Shared fixtures.

Two synthetic datasets back the suite: a 16x16 "microset" for fast wiring
tests and the 64x64 planted-pattern toyset for the end-to-end criteria.
Session-scoped fixtures build each at most once per run.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from gfd.data import load_manifest
from gfd.losses import LossWeights
from gfd.training import TrainConfig, init_state

from toyset import build_microset, build_toyset

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def micro_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("microset")
    return load_manifest(build_microset(root))


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    return load_manifest(build_toyset(root))


def micro_config(**overrides) -> TrainConfig:
    """Smallest config that exercises every network: 16px crops, depth 2."""
    base = dict(
        iterations=4,
        batch_size=8,
        depth=2,
        base_channels=8,
        classifier_arch="small",
        perceptual_weights="random",
        crop=16,
        pretrain_iters=2,
        seed=0,
        log_every=1,
        val_every=1000,
        checkpoint_every=1000,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def micro_state(micro_manifest):
    return init_state(micro_manifest, micro_config())


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def latent_only_weights():
    return LossWeights(use_adversarial=False, use_auxiliary=False, use_perceptual=False)
