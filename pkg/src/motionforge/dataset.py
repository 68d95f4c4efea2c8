"""Processed motion datasets and their on-disk container.

A dataset is a stack of canonicalized clips sharing one skeleton, sampling
rate, and normalization statistics. On disk it is a single file:

    uint32 little-endian header length
    UTF-8 JSON header: {"skeleton", "fps", "stats", "clips"}
    float32 little-endian frame matrix, row-major [total_frames x D]

The clip table in the header records each clip's name, frame count, and
initial world root state, so clips can be cut back out of the matrix and
re-integrated into world space. The float32 matrix is the authoritative
copy of the data; save/load round trips are byte-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import parse_bvh
from .canonical import canonicalize
from .errors import DatasetError
from .motion import (
    FeatureLayout,
    MotionClip,
    NormalizationStats,
    WorldRootState,
    feature_dim,
    normalize,
)
from .skeleton import SkeletonSpec

_HEADER_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class ClipRecord:
    """One clip's slot in the dataset's frame matrix."""

    name: str
    offset: int
    length: int
    initial_root: WorldRootState


class MotionDataset:
    """Canonicalized clips stacked into one normalized frame matrix."""

    def __init__(self, skeleton: SkeletonSpec, fps: float,
                 stats: NormalizationStats, records: list[ClipRecord],
                 data: np.ndarray):
        expected = feature_dim(skeleton.joint_count)
        if data.ndim != 2 or data.shape[1] != expected:
            raise DatasetError(
                f"frame matrix is {data.shape}, expected [*, {expected}]")
        total = sum(r.length for r in records)
        if total != data.shape[0]:
            raise DatasetError(
                f"clip table covers {total} frames, matrix has {data.shape[0]}")
        self.skeleton = skeleton
        self.fps = float(fps)
        self.stats = stats
        self.records = records
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.layout = FeatureLayout(skeleton.joint_count)
        self._window_starts: dict[int, np.ndarray] = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def from_clips(cls, clips: list[MotionClip]) -> "MotionDataset":
        if not clips:
            raise DatasetError("cannot build a dataset from zero clips")
        skeleton = clips[0].skeleton
        fps = clips[0].fps
        for clip in clips[1:]:
            if clip.skeleton.joint_names != skeleton.joint_names:
                raise DatasetError(
                    f"clip {clip.name!r} uses a different skeleton")
            if abs(clip.fps - fps) > 1e-6:
                raise DatasetError(
                    f"clip {clip.name!r} is {clip.fps} fps, dataset is {fps}")
        records = []
        offset = 0
        for clip in clips:
            records.append(ClipRecord(clip.name, offset, clip.frames.shape[0],
                                      clip.initial_root))
            offset += clip.frames.shape[0]
        data = np.concatenate([c.frames for c in clips]).astype(np.float32)
        stats = NormalizationStats.from_frames(data.astype(np.float64))
        return cls(skeleton, fps, stats, records, data)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def feature_count(self) -> int:
        return self.data.shape[1]

    @property
    def clip_count(self) -> int:
        return len(self.records)

    def clip(self, key: "int | str") -> MotionClip:
        """Cut one clip back out of the frame matrix."""
        if isinstance(key, str):
            matches = [r for r in self.records if r.name == key]
            if not matches:
                raise DatasetError(f"no clip named {key!r}")
            record = matches[0]
        else:
            record = self.records[key]
        frames = self.data[record.offset:record.offset + record.length]
        return MotionClip(self.skeleton, self.fps,
                          frames.astype(np.float64), record.initial_root,
                          name=record.name)

    def clips(self) -> list[MotionClip]:
        return [self.clip(i) for i in range(len(self.records))]

    # -- sampling ----------------------------------------------------------

    def _starts_for(self, horizon: int) -> np.ndarray:
        """Global row indices that begin a run of horizon+1 frames."""
        if horizon < 1:
            raise DatasetError("window horizon must be at least 1")
        cached = self._window_starts.get(horizon)
        if cached is not None:
            return cached
        starts = []
        for r in self.records:
            if r.length > horizon:
                starts.append(np.arange(r.offset, r.offset + r.length - horizon))
        if not starts:
            raise DatasetError(
                f"no clip is longer than {horizon + 1} frames")
        out = np.concatenate(starts)
        self._window_starts[horizon] = out
        return out

    def sample_pairs(self, rng: np.random.Generator,
                     batch: int) -> tuple[np.ndarray, np.ndarray]:
        """Normalized (previous frame, next frame) pairs, each [batch, D]."""
        windows = self.sample_windows(rng, batch, 1)
        return windows[:, 0, :], windows[:, 1, :]

    def transition_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Every normalized consecutive pair, clip boundaries excluded."""
        starts = self._starts_for(1)
        rows = starts[:, None] + np.arange(2)[None, :]
        data = normalize(self.data[rows].astype(np.float64), self.stats)
        return data[:, 0, :], data[:, 1, :]

    def sample_windows(self, rng: np.random.Generator, batch: int,
                       horizon: int) -> np.ndarray:
        """Normalized consecutive-frame runs, [batch, horizon + 1, D]."""
        starts = self._starts_for(horizon)
        picks = rng.integers(0, starts.shape[0], size=batch)
        rows = starts[picks][:, None] + np.arange(horizon + 1)[None, :]
        return normalize(self.data[rows].astype(np.float64), self.stats)

    # -- persistence -------------------------------------------------------

    def save(self, path: "str | Path") -> None:
        header = {
            "skeleton": self.skeleton.to_json(),
            "fps": self.fps,
            "stats": self.stats.to_json(),
            "clips": [
                {"name": r.name, "length": r.length,
                 "initial_root": r.initial_root.to_json()}
                for r in self.records
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_HEADER_LEN.pack(len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: "str | Path") -> "MotionDataset":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER_LEN.size:
            raise DatasetError(f"{path}: file too short for a header length")
        (header_len,) = _HEADER_LEN.unpack_from(raw)
        body = raw[_HEADER_LEN.size:]
        if len(body) < header_len:
            raise DatasetError(f"{path}: truncated header")
        try:
            header = json.loads(body[:header_len].decode("utf-8"))
            skeleton = SkeletonSpec.from_json(header["skeleton"])
            fps = float(header["fps"])
            stats = NormalizationStats.from_json(header["stats"])
            table = header["clips"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{path}: malformed header ({exc})") from exc
        payload = body[header_len:]
        width = feature_dim(skeleton.joint_count)
        if len(payload) % (4 * width) != 0:
            raise DatasetError(
                f"{path}: frame payload is not a whole number of rows")
        data = np.frombuffer(payload, dtype="<f4").reshape(-1, width)
        records = []
        offset = 0
        for entry in table:
            records.append(ClipRecord(
                str(entry["name"]), offset, int(entry["length"]),
                WorldRootState.from_json(entry["initial_root"])))
            offset += int(entry["length"])
        return cls(skeleton, fps, stats, records, data.copy())


def ingest_directory(path: "str | Path", up_axis: str = "y") -> MotionDataset:
    """Parse and canonicalize every .bvh file under a directory."""
    files = sorted(Path(path).glob("*.bvh"))
    if not files:
        raise DatasetError(f"no .bvh files under {path}")
    clips = []
    for file in files:
        skeleton, raw = parse_bvh(file.read_text(), up_axis=up_axis)
        clips.append(canonicalize(raw, skeleton, fps=raw.fps, name=file.stem))
    return MotionDataset.from_clips(clips)
