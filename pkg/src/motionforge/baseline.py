"""Deterministic next-frame regressor, the diversity floor.

A ridge regression from each normalized frame to its successor, solved in
closed form on the same transition pairs the diffusion model trains on.
Rolled out autoregressively it produces exactly one continuation per
start pose, so any sampler with real variety must beat it on pairwise
diversity by construction; measuring both makes the margin visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import MotionClip, WorldRootState, denormalize, normalize


@dataclass
class RegressorBaseline:
    """Affine one-step predictor in normalized feature space."""

    weights: np.ndarray  # [D + 1, D]; last row is the bias
    stats: object
    skeleton: object
    fps: float

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def predict(self, x_prev: np.ndarray) -> np.ndarray:
        """Raw frame in, raw successor out; deterministic."""
        z = normalize(np.asarray(x_prev, dtype=np.float64), self.stats)
        z_next = z @ self.weights[:-1] + self.weights[-1]
        return denormalize(z_next, self.stats)

    def rollout(self, x_init: np.ndarray, frames: int,
                initial_root: "WorldRootState | None" = None) -> MotionClip:
        x = np.asarray(x_init, dtype=np.float64)
        rows = np.empty((frames, self.feature_dim))
        for f in range(frames):
            x = self.predict(x)
            rows[f] = x
        return MotionClip(self.skeleton, self.fps, rows,
                          initial_root or WorldRootState(),
                          name="regressor")


def fit_regressor(dataset, ridge: float = 1e-6) -> RegressorBaseline:
    """Closed-form fit on every consecutive pair of the dataset."""
    prev, target = dataset.transition_pairs()
    aug = np.concatenate([prev, np.ones((prev.shape[0], 1))], axis=1)
    gram = aug.T @ aug + ridge * np.eye(aug.shape[1])
    weights = np.linalg.solve(gram, aug.T @ target)
    return RegressorBaseline(weights, dataset.stats, dataset.skeleton,
                             dataset.fps)
