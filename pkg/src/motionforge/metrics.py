"""Quantitative evaluation of generated motion.

Pose diversity (mean pairwise joint distance across sampled rollouts),
displacement error against ground truth, bone-length deviation from the
skeleton's reference lengths, per-frame wall-clock latency, and a sweep
runner that scores schedule length, network depth, and strided-sampler
settings into one CSV table.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import AmdmModel, generate_frame
from .motion import FeatureLayout, MotionClip
from .rng import Stream, philox
from .skeleton import SkeletonSpec


def bone_lengths(local_positions: np.ndarray,
                 skeleton: SkeletonSpec) -> np.ndarray:
    """Euclidean length of every non-root bone, [..., J-1]."""
    p = np.asarray(local_positions)
    child = p[..., 1:, :]
    parent_idx = np.asarray(skeleton.parent[1:])
    parent = p[..., parent_idx, :]
    return np.linalg.norm(child - parent, axis=-1)


def frame_rigid_deviation(frames: np.ndarray,
                          skeleton: SkeletonSpec) -> np.ndarray:
    """Mean absolute bone-length error per frame; frames are feature rows."""
    layout = FeatureLayout(skeleton.joint_count)
    positions = layout.positions(np.asarray(frames))
    gap = np.abs(bone_lengths(positions, skeleton)
                 - skeleton.reference_bone_length)
    return gap.mean(axis=-1)


def rigid_deviation(clip, skeleton: "SkeletonSpec | None" = None) -> float:
    """Bone-length deviation averaged over frames and bones.

    Accepts a MotionClip (skeleton implied) or a frame matrix plus an
    explicit skeleton. Root-local positions make the value invariant to
    world placement.
    """
    if isinstance(clip, MotionClip):
        frames, skeleton = clip.frames, clip.skeleton
    else:
        frames = np.asarray(clip)
        if skeleton is None:
            raise ValueError("a skeleton is required for raw frame input")
    if frames.shape[0] == 0:
        return 0.0
    return float(frame_rigid_deviation(frames, skeleton).mean())


def _joint_tracks(sample) -> np.ndarray:
    """[N, J, 3] world positions from a clip or a raw array."""
    if isinstance(sample, MotionClip):
        return sample.world_joint_positions()
    arr = np.asarray(sample, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError("expected [N, J, 3] joint positions")
    return arr


def apd(samples) -> float:
    """Average pose distance across all unordered pairs of rollouts.

    Each sample is a clip or an [N, J, 3] world joint track; all must
    share N and J. Larger values mean more diverse motion.
    """
    tracks = [_joint_tracks(s) for s in samples]
    if len(tracks) < 2:
        raise ValueError("pose diversity needs at least two samples")
    if len({t.shape[1:] for t in tracks}) != 1:
        raise ValueError("all samples must share the joint count")
    common = min(t.shape[0] for t in tracks)
    if common == 0:
        raise ValueError("an empty sample carries no poses")
    stack = np.stack([t[:common] for t in tracks])
    total, pairs = 0.0, 0
    for a in range(len(tracks)):
        for b in range(a + 1, len(tracks)):
            dist = np.linalg.norm(stack[b] - stack[a], axis=-1)
            total += float(dist.mean())
            pairs += 1
    return total / pairs


def _local_positions(sample) -> np.ndarray:
    if isinstance(sample, MotionClip):
        return sample.layout.positions(sample.frames)
    arr = np.asarray(sample, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError("expected [N, J, 3] joint positions")
    return arr


def ade(pred, reference) -> float:
    """Mean joint distance to a ground-truth clip, on root-local joints.

    Tracks longer than the other are cropped to the shared horizon; the
    joint count must match.
    """
    a = _local_positions(pred)
    b = _local_positions(reference)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"joint shape mismatch: {a.shape} vs {b.shape}")
    common = min(a.shape[0], b.shape[0])
    if common == 0:
        raise ValueError("an empty track carries no poses")
    a, b = a[:common], b[:common]
    return float(np.linalg.norm(a - b, axis=-1).mean())


def latency_bench(model: AmdmModel, warmup: int = 5, iters: int = 50,
                  seed: int = 0, ddim_count: "int | None" = None) -> dict:
    """Median and p95 seconds per generated frame."""
    from .diffusion import ddim_generate_frame

    rng = philox(seed, Stream.EVAL)
    x = model.stats.mean.copy()
    times = []
    for i in range(warmup + iters):
        start = time.perf_counter()
        if ddim_count is None:
            generate_frame(model, x, rng)
        else:
            ddim_generate_frame(model, x, rng, ddim_count)
        elapsed = time.perf_counter() - start
        if i >= warmup:
            times.append(elapsed)
    times = np.sort(times)
    return {
        "median": float(np.median(times)),
        "p95": float(times[int(0.95 * (len(times) - 1))]),
        "mean": float(times.mean()),
    }


def velocity_scatter(model: AmdmModel, x_init: np.ndarray, count: int = 3000,
                     seed: int = 0, batch: int = 250) -> dict:
    """Root-velocity spread of candidate next frames from one state.

    Samples `count` next frames for the same previous frame and returns
    their (d_x, d_y) pairs and d_r values, the raw material for planar
    scatter and turn-rate histogram plots.
    """
    rng = philox(seed, Stream.CANDIDATES)
    rows = []
    remaining = count
    while remaining > 0:
        current = min(batch, remaining)
        prev = np.broadcast_to(np.asarray(x_init, dtype=np.float64),
                               (current, model.feature_dim))
        rows.append(generate_frame(model, prev, rng)[:, :3])
        remaining -= current
    root = np.concatenate(rows, axis=0)
    return {"d_x": root[:, 0], "d_y": root[:, 1], "d_r": root[:, 2]}


def write_velocity_csv(path, scatter: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_x", "d_y", "d_r"])
        for row in zip(scatter["d_x"], scatter["d_y"], scatter["d_r"]):
            writer.writerow([f"{v:.8f}" for v in row])


@dataclass
class MetricReport:
    """One evaluated configuration, one row of the summary table."""

    label: str
    apd: "float | None" = None
    ade: "float | None" = None
    rigid: "float | None" = None
    latency_median: "float | None" = None
    latency_p95: "float | None" = None
    successes: "int | None" = None
    trials: "int | None" = None
    avg_steps: "float | None" = None
    avg_path_len: "float | None" = None
    fingerprint: str = ""
    error: str = ""
    extra: dict = field(default_factory=dict)

    CSV_FIELDS = ("label", "apd", "ade", "rigid", "latency_median",
                  "latency_p95", "succ", "avg_steps", "avg_path_len",
                  "fingerprint", "error")

    @property
    def succ(self) -> str:
        if self.successes is None or self.trials is None:
            return ""
        return f"{self.successes}/{self.trials}"

    def row(self) -> list:
        def fmt(v):
            return "" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)

        return [fmt(getattr(self, name)) if name != "succ" else self.succ
                for name in self.CSV_FIELDS]

    def summary(self) -> str:
        if self.error:
            return f"{self.label}: error: {self.error}"
        parts = [self.label]
        if self.apd is not None:
            parts.append(f"apd {self.apd:.4f}")
        if self.ade is not None:
            parts.append(f"ade {self.ade:.4f}")
        if self.rigid is not None:
            parts.append(f"rigid {self.rigid:.4f}")
        if self.latency_median is not None:
            parts.append(f"latency {self.latency_median * 1e3:.1f}ms "
                         f"(p95 {self.latency_p95 * 1e3:.1f}ms)")
        if self.succ:
            parts.append(f"reached {self.succ}")
        return "  ".join(parts)


def write_report_csv(path, reports: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricReport.CSV_FIELDS)
        for report in reports:
            writer.writerow(report.row())


def evaluate_model(model: AmdmModel, dataset, label: str = "",
                   rollouts: int = 8, rollout_frames: int = 60,
                   greedy_trials: int = 0, greedy_steps: int = 500,
                   target=(10.0, 10.0), seed: int = 0,
                   ddim_count: "int | None" = None,
                   latency_iters: int = 20) -> MetricReport:
    """Score one trained model: diversity, accuracy, rigidity, speed, task."""
    from . import synthesis
    from .checkpoint import config_fingerprint

    report = MetricReport(label=label)
    reference = dataset.clip(0)
    x_init = reference.frames[0]

    results = []
    for k in range(rollouts):
        results.append(synthesis.rollout_random(
            model, x_init, rollout_frames, seed=seed + k,
            ddim_count=ddim_count))
    finished = [r for r in results if len(r.clip) == rollout_frames]
    if len(finished) >= 2:
        report.apd = apd([r.clip for r in finished])
    report.rigid = float(np.mean([
        rigid_deviation(r.clip) for r in results if len(r.clip) > 0
    ])) if any(len(r.clip) > 0 for r in results) else None

    frames = min(rollout_frames, len(reference) - 1)
    gt = MotionClip(model.skeleton, model.fps,
                    reference.frames[1:frames + 1], reference.initial_root)
    pred = results[0].clip
    if len(pred) >= frames and frames > 0:
        pred = MotionClip(model.skeleton, model.fps, pred.frames[:frames],
                          reference.initial_root)
        report.ade = ade(pred, gt)

    bench = latency_bench(model, warmup=3, iters=latency_iters, seed=seed,
                          ddim_count=ddim_count)
    report.latency_median = bench["median"]
    report.latency_p95 = bench["p95"]

    if greedy_trials > 0:
        wins, steps_taken, path_lens = 0, [], []
        for trial in range(greedy_trials):
            run = synthesis.greedy_target_run(
                model, x_init, target, max_steps=greedy_steps,
                seed=seed + 1000 + trial, ddim_count=ddim_count)
            if run.success:
                wins += 1
                steps_taken.append(run.steps)
                path_lens.append(run.path_length)
        report.successes, report.trials = wins, greedy_trials
        if steps_taken:
            report.avg_steps = float(np.mean(steps_taken))
            report.avg_path_len = float(np.mean(path_lens))
    report.fingerprint = config_fingerprint({
        "label": label, "ddim": ddim_count, "seed": seed})
    return report


def ablation_run(dataset, base_config, timestep_grid=(5, 16, 20),
                 layer_grid=(4, 6, 9, 13, 15), ddim_grid=(5, 2),
                 eval_kwargs: "dict | None" = None,
                 progress=None) -> list:
    """Train and score the schedule/depth/stride sweep; returns reports.

    Every cell is trained from `base_config` with one knob changed. The
    strided-sampler rows reuse the base model (matching timesteps) instead
    of retraining. Failures inside a cell are recorded on its report and
    the sweep continues.
    """
    from dataclasses import replace

    from .diffusion import train_model

    eval_kwargs = dict(eval_kwargs or {})
    reports = []
    base_model = None

    def run_cell(label, config=None, model=None, ddim_count=None):
        nonlocal base_model
        try:
            if model is None:
                model, _ = train_model(dataset, config)
                if config.timesteps == base_config.timesteps and \
                        config.layers == base_config.layers:
                    base_model = model
            report = evaluate_model(model, dataset, label=label,
                                    ddim_count=ddim_count, **eval_kwargs)
        except Exception as exc:  # cell failures must not kill the sweep
            report = MetricReport(label=label, error=f"{type(exc).__name__}: {exc}")
        reports.append(report)
        if progress:
            progress(report)
        return report

    for t in timestep_grid:
        run_cell(f"T{t}", replace(base_config, timesteps=t))
    for layers in layer_grid:
        if layers == base_config.layers:
            continue
        run_cell(f"L{layers}", replace(base_config, layers=layers))
    if base_model is None:
        run_cell(f"T{base_config.timesteps}-base", base_config)
    for count in ddim_grid:
        if base_model is not None:
            run_cell(f"T{base_config.timesteps}-I{count}", model=base_model,
                     ddim_count=count)
    return reports
