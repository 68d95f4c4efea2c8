"""Metric oracles: brute-force references at tight tolerance."""

import numpy as np
import pytest

from motionforge import metrics
from motionforge.metrics import (MetricReport, ade, apd, bone_lengths,
                                 frame_rigid_deviation, latency_bench,
                                 rigid_deviation, velocity_scatter,
                                 write_report_csv, write_velocity_csv)
from motionforge.motion import MotionClip, WorldRootState
from motionforge.rng import Stream, philox


def _brute_apd(tracks):
    n = len(tracks)
    vals = []
    for a in range(n):
        for b in range(a + 1, n):
            d = 0.0
            cnt = 0
            for f in range(tracks[0].shape[0]):
                for j in range(tracks[0].shape[1]):
                    d += np.sqrt(((tracks[a][f, j] - tracks[b][f, j]) ** 2).sum())
                    cnt += 1
            vals.append(d / cnt)
    return sum(vals) / len(vals)


def test_apd_matches_brute_force():
    rng = np.random.default_rng(0)
    tracks = [rng.standard_normal((6, 4, 3)) for _ in range(4)]
    assert apd(tracks) == pytest.approx(_brute_apd(tracks), abs=1e-9)


def test_apd_crops_to_common_horizon():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 3, 3))
    b = rng.standard_normal((5, 3, 3))
    assert apd([a, b]) == pytest.approx(_brute_apd([a[:5], b]), abs=1e-9)


def test_apd_validation():
    with pytest.raises(ValueError):
        apd([np.zeros((4, 2, 3))])
    with pytest.raises(ValueError):
        apd([np.zeros((4, 2, 3)), np.zeros((4, 3, 3))])
    with pytest.raises(ValueError):
        apd([np.zeros((0, 2, 3)), np.zeros((4, 2, 3))])


def test_ade_matches_brute_force():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((7, 5, 3))
    b = rng.standard_normal((9, 5, 3))
    brute = np.mean([
        np.sqrt(((a[f, j] - b[f, j]) ** 2).sum())
        for f in range(7) for j in range(5)
    ])
    assert ade(a, b) == pytest.approx(brute, abs=1e-9)
    with pytest.raises(ValueError):
        ade(a, rng.standard_normal((7, 4, 3)))


def test_bone_lengths_and_rigid_deviation(stock_dataset):
    clip = stock_dataset.clip("walk")
    skel = clip.skeleton
    pos = clip.layout.positions(clip.frames)
    lengths = bone_lengths(pos, skel)
    f, j = 3, 5
    parent = skel.parent[j]
    brute = np.sqrt(((pos[f, j] - pos[f, parent]) ** 2).sum())
    assert lengths[f, j - 1] == pytest.approx(brute, abs=1e-12)

    dev = frame_rigid_deviation(clip.frames, skel)
    brute_dev = np.abs(lengths[f] - skel.reference_bone_length).mean()
    assert dev[f] == pytest.approx(brute_dev, abs=1e-12)
    assert rigid_deviation(clip) == pytest.approx(dev.mean(), abs=1e-12)
    assert rigid_deviation(clip.frames, skel) == pytest.approx(dev.mean(),
                                                               abs=1e-12)
    with pytest.raises(ValueError):
        rigid_deviation(clip.frames)


def test_ground_truth_clip_is_rigid(stock_dataset):
    # The corpus is built by rigid forward kinematics, so its bone lengths
    # match the skeleton reference almost exactly.
    for name in ("walk", "turns"):
        assert rigid_deviation(stock_dataset.clip(name)) < 1e-6


def test_rigid_deviation_scales_with_stretch(stock_dataset):
    clip = stock_dataset.clip("idle")
    frames = clip.frames.copy()
    lay = clip.layout
    pos = lay.positions(frames) * 1.10  # uniform 10% stretch
    frames[:, lay.j_p] = pos.reshape(len(clip), -1)
    stretched = MotionClip(clip.skeleton, clip.fps, frames,
                           clip.initial_root)
    expected = 0.10 * clip.skeleton.reference_bone_length.mean()
    assert rigid_deviation(stretched) == pytest.approx(expected, rel=1e-6)
    assert rigid_deviation(MotionClip(clip.skeleton, clip.fps,
                                      np.empty((0, lay.dim)),
                                      WorldRootState())) == 0.0


def test_latency_bench_counts_and_fields(random_model):
    bench = latency_bench(random_model, warmup=1, iters=6)
    assert set(bench) == {"median", "p95", "mean"}
    assert 0 < bench["median"] <= bench["p95"]
    ddim = latency_bench(random_model, warmup=1, iters=6, ddim_count=2)
    assert ddim["median"] > 0


def test_velocity_scatter_batches(random_model, walk_frame):
    out = velocity_scatter(random_model, walk_frame, count=120, batch=50)
    assert out["d_x"].shape == (120,)
    assert out["d_y"].shape == (120,)
    assert out["d_r"].shape == (120,)
    # Identical request reproduces exactly.
    again = velocity_scatter(random_model, walk_frame, count=120, batch=50)
    np.testing.assert_array_equal(out["d_x"], again["d_x"])


def test_csv_writers(tmp_path, random_model, walk_frame):
    scatter = velocity_scatter(random_model, walk_frame, count=10, batch=10)
    vpath = tmp_path / "scatter.csv"
    write_velocity_csv(vpath, scatter)
    lines = vpath.read_text().strip().splitlines()
    assert lines[0] == "d_x,d_y,d_r"
    assert len(lines) == 11

    reports = [MetricReport("a", apd=1.0, successes=3, trials=5),
               MetricReport("b", error="boom")]
    rpath = tmp_path / "reports.csv"
    write_report_csv(rpath, reports)
    body = rpath.read_text().strip().splitlines()
    assert body[0].startswith("label,apd")
    assert "3/5" in body[1]
    assert "boom" in body[2]


def test_report_summary_lines():
    good = MetricReport("run", apd=0.5, rigid=0.01, latency_median=0.004,
                        latency_p95=0.005, successes=4, trials=5)
    text = good.summary()
    assert text.startswith("run")
    assert "apd 0.5000" in text
    assert "4.0ms" in text
    assert "reached 4/5" in text
    assert MetricReport("x", error="no").summary() == "x: error: no"


def test_evaluate_model_smoke(random_model, tiny_dataset):
    report = metrics.evaluate_model(random_model, tiny_dataset,
                                    label="smoke", rollouts=2,
                                    rollout_frames=4, latency_iters=2)
    assert report.label == "smoke"
    assert report.latency_median is not None
    assert report.fingerprint
