"""Closed-form next-frame regressor used as the diversity floor."""

from __future__ import annotations

import numpy as np
import pytest

from motionforge.baseline import RegressorBaseline, fit_regressor
from motionforge.metrics import apd
from motionforge.motion import normalize


class TestFit:
    def test_matches_normal_equations(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset, ridge=1e-6)
        prev, target = tiny_dataset.transition_pairs()
        aug = np.concatenate([prev, np.ones((prev.shape[0], 1))], axis=1)
        lhs = aug.T @ aug + 1e-6 * np.eye(aug.shape[1])
        expected = np.linalg.solve(lhs, aug.T @ target)
        np.testing.assert_allclose(baseline.weights, expected, atol=1e-12)

    def test_exact_on_exactly_linear_data(self, tiny_dataset):
        # When the successor truly is affine in the frame, the ridge fit
        # recovers it and the one-step residual collapses to ~0.
        rng = np.random.default_rng(3)
        dim = 4
        true_w = rng.standard_normal((dim, dim)) * 0.3
        true_b = rng.standard_normal(dim) * 0.1

        class Pairs:
            stats = tiny_dataset.stats
            skeleton = tiny_dataset.skeleton
            fps = 30.0

            def transition_pairs(self):
                prev = rng.standard_normal((200, dim))
                return prev, prev @ true_w + true_b

        baseline = fit_regressor(Pairs(), ridge=1e-10)
        np.testing.assert_allclose(baseline.weights[:-1], true_w, atol=1e-6)
        np.testing.assert_allclose(baseline.weights[-1], true_b, atol=1e-6)

    def test_predict_normalizes_and_denormalizes(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset)
        x = tiny_dataset.clip(0).frames[5]
        z = normalize(x, tiny_dataset.stats)
        z_next = z @ baseline.weights[:-1] + baseline.weights[-1]
        expected = tiny_dataset.stats.mean + tiny_dataset.stats.std * z_next
        np.testing.assert_allclose(baseline.predict(x), expected, atol=1e-12)

    def test_one_step_beats_identity_on_training_data(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset)
        prev_n, target_n = tiny_dataset.transition_pairs()
        stats = tiny_dataset.stats
        prev = stats.mean + stats.std * prev_n
        target = stats.mean + stats.std * target_n
        fit_err = np.mean((np.stack([baseline.predict(p) for p in prev])
                           - target) ** 2)
        hold_err = np.mean((prev - target) ** 2)
        assert fit_err < hold_err


class TestRollout:
    def test_rollout_is_deterministic(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset)
        start = tiny_dataset.clip(0).frames[0]
        a = baseline.rollout(start, 20)
        b = baseline.rollout(start, 20)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_rollout_chains_predict(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset)
        start = tiny_dataset.clip(0).frames[0]
        clip = baseline.rollout(start, 5)
        x = start
        for f in range(5):
            x = baseline.predict(x)
            np.testing.assert_array_equal(clip.frames[f], x)

    def test_identical_starts_have_zero_diversity(self, tiny_dataset):
        # The property the diffusion sampler is later measured against.
        baseline = fit_regressor(tiny_dataset)
        start = tiny_dataset.clip(0).frames[2]
        layout_dim = tiny_dataset.skeleton.joint_count
        rollouts = [baseline.rollout(start, 12) for _ in range(4)]
        stacked = np.stack([
            clip.frames[:, 3:3 + 3 * layout_dim].reshape(12, layout_dim, 3)
            for clip in rollouts])
        assert apd(stacked) == pytest.approx(0.0, abs=1e-15)

    def test_feature_dim_reported(self, tiny_dataset):
        baseline = fit_regressor(tiny_dataset)
        assert baseline.feature_dim == tiny_dataset.feature_count
        assert isinstance(baseline, RegressorBaseline)
