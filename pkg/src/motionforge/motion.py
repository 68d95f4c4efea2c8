"""Canonical per-frame motion features and the world-space root state.

A frame is a flat vector of length ``D = 3 + 12 * J``:

    [d_x, d_y, d_r | j_p (J*3) | j_v (J*3) | j_o (J*6)]

``d_x, d_y`` are the root's planar displacement for this frame expressed in
the previous frame's heading coordinates (x forward, y leftward), ``d_r`` is
the heading change about the up axis. ``j_p`` are joint positions in the
current root-local heading frame whose origin sits on the ground under the
root, so heights stay absolute. ``j_v`` are per-frame differences of
consecutive root-local positions and ``j_o`` are root-local joint
orientations as the first two rotation-matrix columns (6D form).

The canonical world frame is right-handed with the up axis as the third
component; positive heading turns counter-clockwise seen from above.
All displacement-like quantities are per frame, not per second.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateRotationError
from .skeleton import SkeletonSpec

UP = 2  # index of the up component in canonical 3-vectors


def feature_dim(joint_count: int) -> int:
    return 3 + 12 * joint_count


@dataclass(frozen=True)
class FeatureLayout:
    """Slice map into the flat feature vector for a J-joint skeleton."""

    joint_count: int

    @property
    def dim(self) -> int:
        return feature_dim(self.joint_count)

    d_x = 0
    d_y = 1
    d_r = 2

    @property
    def root_delta(self) -> slice:
        return slice(0, 3)

    @property
    def j_p(self) -> slice:
        return slice(3, 3 + 3 * self.joint_count)

    @property
    def j_v(self) -> slice:
        j = self.joint_count
        return slice(3 + 3 * j, 3 + 6 * j)

    @property
    def j_o(self) -> slice:
        j = self.joint_count
        return slice(3 + 6 * j, 3 + 12 * j)

    def positions(self, frame: np.ndarray) -> np.ndarray:
        """Root-local joint positions, shaped [..., J, 3]."""
        return frame[..., self.j_p].reshape(*frame.shape[:-1], self.joint_count, 3)

    def velocities(self, frame: np.ndarray) -> np.ndarray:
        return frame[..., self.j_v].reshape(*frame.shape[:-1], self.joint_count, 3)

    def orientations(self, frame: np.ndarray) -> np.ndarray:
        """Root-local 6D orientation blocks, shaped [..., J, 6]."""
        return frame[..., self.j_o].reshape(*frame.shape[:-1], self.joint_count, 6)

    def position_index(self, joint: int, component: int) -> int:
        """Flat index of one coordinate of ``j_p``."""
        return 3 + 3 * joint + component

    def height_index(self, joint: int) -> int:
        return self.position_index(joint, UP)


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(-np.asarray(theta) + np.pi, 2.0 * np.pi)
    return -(wrapped - np.pi)


def rot2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rot_up(theta: float) -> np.ndarray:
    """Rotation about the up axis in canonical 3-space."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sixd_to_rotation(block: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Recover a proper rotation from a 6D block via Gram-Schmidt.

    The block holds the first two matrix columns; the third comes from
    their cross product. Raises ``DegenerateRotationError`` when the two
    vectors are (near) parallel or zero, so callers can substitute the
    previous frame's rotation.
    """
    block = np.asarray(block, dtype=np.float64)
    a, b = block[:3], block[3:6]
    na = np.linalg.norm(a)
    if na < eps:
        raise DegenerateRotationError("first 6D column is near zero")
    c1 = a / na
    b_orth = b - np.dot(c1, b) * c1
    nb = np.linalg.norm(b_orth)
    if nb < eps:
        raise DegenerateRotationError("6D columns are near parallel")
    c2 = b_orth / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def rotation_to_sixd(rotation: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened."""
    r = np.asarray(rotation)
    return np.concatenate([r[:, 0], r[:, 1]])


@dataclass(frozen=True)
class WorldRootState:
    """Planar root anchor: position, heading, and the ground height reference."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    ground: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "heading": self.heading, "ground": self.ground}

    @classmethod
    def from_json(cls, obj: dict) -> "WorldRootState":
        return cls(obj["x"], obj["y"], obj["heading"], obj.get("ground", 0.0))


def integrate_root(state: WorldRootState, frame: np.ndarray) -> WorldRootState:
    """Advance the world anchor by one frame's (d_x, d_y, d_r)."""
    d_x, d_y, d_r = (float(v) for v in np.asarray(frame)[:3])
    step = rot2d(state.heading) @ np.array([d_x, d_y])
    return replace(
        state,
        x=state.x + step[0],
        y=state.y + step[1],
        heading=float(wrap_angle(state.heading + d_r)),
    )


def integrate_track(initial: WorldRootState, frames: np.ndarray) -> list[WorldRootState]:
    """World root state after each frame, starting from ``initial``."""
    track = []
    state = initial
    for frame in frames:
        state = integrate_root(state, frame)
        track.append(state)
    return track


def local_to_world(local_positions: np.ndarray, state: WorldRootState) -> np.ndarray:
    """Map root-local joint positions [..., 3] into world space."""
    p = np.asarray(local_positions)
    planar = p[..., :2] @ rot2d(state.heading).T + np.array([state.x, state.y])
    height = p[..., 2:3] + state.ground
    return np.concatenate([planar, height], axis=-1)


def world_to_local(world_positions: np.ndarray, state: WorldRootState) -> np.ndarray:
    p = np.asarray(world_positions)
    planar = (p[..., :2] - np.array([state.x, state.y])) @ rot2d(state.heading)
    height = p[..., 2:3] - state.ground
    return np.concatenate([planar, height], axis=-1)


STD_FLOOR = 1e-6


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel z-score statistics with a floored standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be matching 1-d vectors")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_frames(cls, frames: np.ndarray) -> "NormalizationStats":
        frames = np.asarray(frames, dtype=np.float64)
        return cls(frames.mean(axis=0), frames.std(axis=0))

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationStats":
        return cls(np.asarray(obj["mean"]), np.asarray(obj["std"]))


def normalize(frame: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.shape[-1] != stats.dim:
        raise ValueError(f"frame dim {frame.shape[-1]} != stats dim {stats.dim}")
    return (frame - stats.mean) / stats.std


def denormalize(frame: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.shape[-1] != stats.dim:
        raise ValueError(f"frame dim {frame.shape[-1]} != stats dim {stats.dim}")
    return frame * stats.std + stats.mean


@dataclass
class MotionClip:
    """A canonicalized clip: feature rows plus the world anchor they start from."""

    skeleton: SkeletonSpec
    fps: float
    frames: np.ndarray  # [F, D]
    initial_root: WorldRootState
    name: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        expected = feature_dim(self.skeleton.joint_count)
        if self.frames.ndim != 2 or self.frames.shape[1] != expected:
            raise ValueError(
                f"frames must be [F, {expected}] for J={self.skeleton.joint_count}"
            )

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(self.skeleton.joint_count)

    def world_track(self) -> list[WorldRootState]:
        return integrate_track(self.initial_root, self.frames)

    def world_joint_positions(self) -> np.ndarray:
        """World-space joint positions for every frame, [F, J, 3]."""
        layout = self.layout
        out = np.empty((len(self), self.skeleton.joint_count, 3))
        for i, state in enumerate(self.world_track()):
            out[i] = local_to_world(layout.positions(self.frames[i]), state)
        return out
