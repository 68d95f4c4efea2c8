"""Shared fixtures.

Two tiers of model: `random_model` is an untrained net for mechanics
tests (cheap, deterministic), while `trained_model` runs the full
desk-scale recipe once per session and is shared by every test that needs
real motion quality. Training takes a few minutes on one core; everything
else is fast.
"""

from __future__ import annotations

import numpy as np
import pytest

from motionforge.bvh import parse_bvh
from motionforge.canonical import canonicalize
from motionforge.dataset import MotionDataset
from motionforge.diffusion import AmdmModel, TrainConfig, make_schedule, train_model
from motionforge.fixtures import GaitProfile, locomotion_profiles, walker_bvh
from motionforge.nets import init_denoiser
from motionforge.rng import Stream, philox

TRAIN_RECIPE = TrainConfig(ddpm_epochs=200, rollout_epochs=30, seed=0)


def build_stock_dataset(scale: float = 0.5) -> MotionDataset:
    clips = []
    for name, profile in locomotion_profiles(duration_scale=scale).items():
        skeleton, raw = parse_bvh(walker_bvh(profile))
        clips.append(canonicalize(raw, skeleton, fps=raw.fps, name=name))
    return MotionDataset.from_clips(clips)


@pytest.fixture(scope="session")
def stock_dataset() -> MotionDataset:
    return build_stock_dataset()


@pytest.fixture(scope="session")
def walk_frame(stock_dataset) -> np.ndarray:
    """A mid-gait pose from the straight-walk clip."""
    return stock_dataset.clip("walk").frames[60]


@pytest.fixture(scope="session")
def random_model(stock_dataset) -> AmdmModel:
    """Untrained but fully functional model for mechanics tests."""
    denoiser = init_denoiser(philox(0, Stream.INIT),
                             stock_dataset.feature_count,
                             hidden=48, layers=3, embed_dim=16)
    return AmdmModel(make_schedule(8, "cosine"), denoiser,
                     stock_dataset.stats, stock_dataset.skeleton,
                     stock_dataset.fps)


@pytest.fixture(scope="session")
def trained_bundle(stock_dataset):
    """(model, training history) from the standard desk-scale recipe."""
    model, history = train_model(stock_dataset, TRAIN_RECIPE)
    return model, history


@pytest.fixture(scope="session")
def trained_model(trained_bundle) -> AmdmModel:
    return trained_bundle[0]


@pytest.fixture(scope="session")
def tiny_dataset() -> MotionDataset:
    """Two very short clips; enough for dataset/container mechanics."""
    clips = []
    for name, profile in [("a", GaitProfile(1.0, 1.0)),
                          ("b", GaitProfile(1.2, 1.4, 0.4))]:
        skeleton, raw = parse_bvh(walker_bvh(profile))
        clips.append(canonicalize(raw, skeleton, fps=raw.fps, name=name))
    return MotionDataset.from_clips(clips)
