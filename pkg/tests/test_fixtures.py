"""Procedural walker generator: parseability, contact structure, commands."""

from __future__ import annotations

import numpy as np
import pytest

from motionforge.bvh import parse_bvh
from motionforge.canonical import canonicalize
from motionforge.fixtures import (
    CONTACT_HEIGHT,
    FOOT_JOINTS,
    JOINT_ORDER,
    GaitProfile,
    locomotion_profiles,
    ramp,
    two_joint_ramp_bvh,
    walker_bvh,
    write_locomotion_set,
)
from motionforge.synthesis import foot_slide


def make_clip(profile: GaitProfile, name: str = "clip"):
    skeleton, raw = parse_bvh(walker_bvh(profile))
    return skeleton, canonicalize(raw, skeleton, fps=raw.fps, name=name)


class TestProfiles:
    def test_sampled_lengths_and_broadcast(self):
        speed, turn = GaitProfile(2.0, 1.3, 0.2).sampled(30.0)
        assert speed.shape == turn.shape == (60,)
        assert np.all(speed == 1.3) and np.all(turn == 0.2)

    def test_ramp_interpolates_breakpoints(self):
        values = ramp(5, (0.0, 0.0), (0.5, 1.0), (1.0, 0.0))
        np.testing.assert_allclose(values, [0.0, 0.5, 1.0, 0.5, 0.0])

    def test_stock_set_composition(self):
        profiles = locomotion_profiles(duration_scale=0.5)
        assert set(profiles) == {"walk", "fast", "turns", "pivot",
                                 "start_stop", "idle"}
        frames = sum(p.sampled(30.0)[0].shape[0] for p in profiles.values())
        assert frames == 1080

    def test_pivot_turns_hard_at_low_speed(self):
        speed, turn = locomotion_profiles()["pivot"].sampled(30.0)
        assert speed.max() <= 0.61
        assert np.abs(turn).max() > 1.2


class TestWalkerBvh:
    def test_parses_with_expected_skeleton(self):
        skeleton, clip = make_clip(GaitProfile(1.0, 1.0))
        assert list(skeleton.joint_names) == JOINT_ORDER
        assert clip.fps == pytest.approx(30.0, rel=1e-6)
        assert len(clip) == 30

    def test_commanded_speed_realized_in_forward_channel(self):
        _, clip = make_clip(GaitProfile(3.0, 1.3))
        np.testing.assert_allclose(clip.frames[1:, 0] * 30.0, 1.3, atol=1e-4)
        # lateral drift stays within the intentional hip sway
        assert np.abs(clip.frames[1:, 1]).max() < 0.005

    def test_commanded_turn_rate_realized_in_heading_channel(self):
        profile = locomotion_profiles(0.5)["turns"]
        _, turn = profile.sampled(30.0)
        _, clip = make_clip(profile)
        np.testing.assert_allclose(clip.frames[1:, 2] * 30.0, turn[1:],
                                   atol=1e-5)

    def test_speed_profile_tracked_through_ramp(self):
        speeds = ramp(90, (0.0, 0.4), (0.5, 1.8), (1.0, 0.4))
        _, clip = make_clip(GaitProfile(3.0, speeds))
        np.testing.assert_allclose(clip.frames[1:, 0] * 30.0, speeds[:-1],
                                   atol=1e-4)

    def test_stance_foot_nearly_still(self):
        # The generator couples stride frequency to speed so the planted
        # foot barely moves; free sampling from a trained model slides
        # several times faster, which is what the slide metric leans on.
        _, clip = make_clip(GaitProfile(4.0, 1.1), "walk")
        assert foot_slide(clip) < 0.8

    def test_contact_every_frame_and_real_swings(self):
        skeleton, clip = make_clip(GaitProfile(4.0, 1.1), "walk")
        feet = [skeleton.index_of(name) for name in FOOT_JOINTS]
        heights = clip.world_joint_positions()[:, feet, 2]
        assert np.all(heights.min(axis=1) < CONTACT_HEIGHT)
        assert heights[:, 0].max() > 0.1 and heights[:, 1].max() > 0.1

    def test_idle_clip_stands_still(self):
        _, clip = make_clip(GaitProfile(2.0, 0.0), "idle")
        track = clip.world_track()
        assert np.hypot(track[-1].x, track[-1].y) < 0.02
        assert np.abs(clip.frames[:, 0] * 30.0).max() < 0.05


class TestHelpers:
    def test_two_joint_ramp_positions(self):
        skeleton, raw = parse_bvh(two_joint_ramp_bvh(6))
        np.testing.assert_allclose(raw.positions[:, 0, 0], np.arange(6.0),
                                   atol=1e-12)
        assert len(skeleton.joint_names) == 2

    def test_write_locomotion_set(self, tmp_path):
        paths = write_locomotion_set(tmp_path / "clips", duration_scale=0.25)
        assert [p.name for p in paths] == [
            "walk.bvh", "fast.bvh", "turns.bvh", "pivot.bvh",
            "start_stop.bvh", "idle.bvh"]
        for path in paths:
            assert path.exists() and path.stat().st_size > 500
        skeleton, raw = parse_bvh(paths[0].read_text())
        assert list(skeleton.joint_names) == JOINT_ORDER
