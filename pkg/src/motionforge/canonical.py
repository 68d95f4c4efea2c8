"""Conversion between world-space pose sequences and canonical features."""

from __future__ import annotations

import numpy as np

from .bvh import RawPoseSequence
from .errors import CanonicalizationError, DegenerateRotationError
from .motion import (
    FeatureLayout,
    MotionClip,
    WorldRootState,
    rot2d,
    rot_up,
    rotation_to_sixd,
    sixd_to_rotation,
    wrap_angle,
)
from .skeleton import SkeletonSpec

# Characters in Y-up BVH files conventionally face +Z; in the canonical
# up-last frame that direction is -y.
DEFAULT_FORWARD = np.array([0.0, -1.0, 0.0])

HEADING_EPS = 1e-6


def extract_headings(
    rotations: np.ndarray, forward_local: np.ndarray = DEFAULT_FORWARD
) -> np.ndarray:
    """Planar facing angle per frame from root world rotations [N, 3, 3].

    The root's local forward axis is projected onto the ground plane; a
    near-vertical facing on the first frame is unrecoverable, later ones
    reuse the previous frame's heading.
    """
    forward = rotations @ forward_local
    headings = np.empty(rotations.shape[0])
    for f in range(rotations.shape[0]):
        planar = forward[f, :2]
        if np.linalg.norm(planar) < HEADING_EPS:
            if f == 0:
                raise CanonicalizationError(
                    "root facing is up-axis aligned on the first frame"
                )
            headings[f] = headings[f - 1]
        else:
            headings[f] = np.arctan2(planar[1], planar[0])
    return headings


def canonicalize(
    raw: RawPoseSequence,
    skeleton: SkeletonSpec,
    fps: float | None = None,
    forward_local: np.ndarray = DEFAULT_FORWARD,
    name: str = "",
) -> MotionClip:
    """Convert a world pose sequence into per-frame canonical features.

    Frame 0 carries zero root increments (there is no predecessor) and
    copies frame 1's joint velocities, so integrating the clip from its
    ``initial_root`` reproduces the raw world trajectory exactly.
    """
    n, j = raw.positions.shape[:2]
    if n < 2:
        raise CanonicalizationError("need at least 2 frames to canonicalize")
    if j != skeleton.joint_count:
        raise CanonicalizationError(
            f"pose sequence has {j} joints, skeleton has {skeleton.joint_count}"
        )
    fps = raw.fps if fps is None else fps
    headings = extract_headings(raw.rotations[:, 0], forward_local)
    root_planar = raw.positions[:, 0, :2]

    layout = FeatureLayout(j)
    frames = np.zeros((n, layout.dim))
    local_positions = np.empty((n, j, 3))
    for f in range(n):
        inv = rot_up(-headings[f])
        shifted = raw.positions[f] - np.array([root_planar[f, 0], root_planar[f, 1], 0.0])
        local_positions[f] = shifted @ inv.T
        local_rotations = inv @ raw.rotations[f]
        frames[f, layout.j_p] = local_positions[f].reshape(-1)
        frames[f, layout.j_o] = np.concatenate(
            [rotation_to_sixd(local_rotations[k]) for k in range(j)]
        )
    for f in range(1, n):
        step = rot2d(-headings[f - 1]) @ (root_planar[f] - root_planar[f - 1])
        frames[f, layout.d_x] = step[0]
        frames[f, layout.d_y] = step[1]
        frames[f, layout.d_r] = wrap_angle(headings[f] - headings[f - 1])
        frames[f, layout.j_v] = (local_positions[f] - local_positions[f - 1]).reshape(-1)
    frames[0, layout.j_v] = frames[1, layout.j_v]

    initial = WorldRootState(root_planar[0, 0], root_planar[0, 1], headings[0])
    return MotionClip(skeleton, fps, frames, initial, name=name)


def clip_world_rotations(clip: MotionClip) -> np.ndarray:
    """World rotation matrices [F, J, 3, 3] recovered from a clip.

    Degenerate generated 6D blocks fall back to the same joint's previous
    frame (identity on frame 0).
    """
    layout = clip.layout
    track = clip.world_track()
    j = clip.skeleton.joint_count
    out = np.empty((len(clip), j, 3, 3))
    for f in range(len(clip)):
        blocks = layout.orientations(clip.frames[f])
        spin = rot_up(track[f].heading)
        for k in range(j):
            try:
                local = sixd_to_rotation(blocks[k])
            except DegenerateRotationError:
                out[f, k] = out[f - 1, k] if f > 0 else np.eye(3)
                continue
            out[f, k] = spin @ local
    return out
