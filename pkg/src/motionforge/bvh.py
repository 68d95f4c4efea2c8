"""BVH motion-capture ingestion and a minimal exporter.

Supports the common HIERARCHY/MOTION subset: OFFSET, CHANNELS with
``{X,Y,Z}{position,rotation}``, nested JOINT blocks, End Site, ``Frames:``
and ``Frame Time:``. Rotation channels are composed in their declared
order. Parsed world poses are expressed in the canonical up-last frame
(see :mod:`motionforge.motion`); BVH files are treated as Y-up by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BvhParseError
from .motion import UP
from .skeleton import SkeletonSpec

_POSITION_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROTATION_AXES = {"Xrotation": 0, "Yrotation": 1, "Zrotation": 2}

# Basis change from a Y-up world into the canonical up-last frame.
_Y_UP_TO_CANONICAL = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


@dataclass
class BvhJoint:
    name: str
    parent: int
    offset: np.ndarray
    channels: list[str]
    end_site: np.ndarray | None = None


@dataclass
class BvhDocument:
    """Parsed BVH file: joint tree plus raw channel rows."""

    joints: list[BvhJoint]
    frame_time: float
    channel_values: np.ndarray  # [N, total channels]

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time

    @property
    def frame_count(self) -> int:
        return self.channel_values.shape[0]

    def skeleton(self, up_axis: str = "y") -> SkeletonSpec:
        basis = _basis(up_axis)
        return SkeletonSpec(
            joint_names=tuple(j.name for j in self.joints),
            parent=tuple(j.parent for j in self.joints),
            reference_offsets=np.stack([basis @ j.offset for j in self.joints]),
            end_sites={
                i: basis @ j.end_site
                for i, j in enumerate(self.joints)
                if j.end_site is not None
            },
        )


@dataclass
class RawPoseSequence:
    """World-space forward-kinematics output in the canonical frame."""

    positions: np.ndarray  # [N, J, 3]
    rotations: np.ndarray  # [N, J, 3, 3]
    fps: float


def _basis(up_axis: str) -> np.ndarray:
    if up_axis == "y":
        return _Y_UP_TO_CANONICAL
    if up_axis == "z":
        return np.eye(3)
    raise ValueError(f"unsupported up axis {up_axis!r}")


class _Lines:
    def __init__(self, text: str):
        self._raw = text.splitlines()
        self._pos = 0

    def next(self) -> tuple[int, list[str]]:
        while self._pos < len(self._raw):
            self._pos += 1
            tokens = self._raw[self._pos - 1].split()
            if tokens:
                return self._pos, tokens
        raise BvhParseError("unexpected end of file", len(self._raw))

    def peek(self) -> list[str] | None:
        pos = self._pos
        try:
            _, tokens = self.next()
        except BvhParseError:
            return None
        self._pos = pos
        return tokens

    def remaining(self):
        while True:
            if self.peek() is None:
                return
            yield self.next()


def _expect(lines: _Lines, keyword: str) -> tuple[int, list[str]]:
    line, tokens = lines.next()
    if tokens[0] != keyword:
        raise BvhParseError(f"expected {keyword!r}, found {tokens[0]!r}", line)
    return line, tokens


def _read_offset(lines: _Lines) -> np.ndarray:
    line, tokens = _expect(lines, "OFFSET")
    if len(tokens) != 4:
        raise BvhParseError("OFFSET needs three values", line)
    try:
        return np.array([float(v) for v in tokens[1:]])
    except ValueError:
        raise BvhParseError("OFFSET values must be numeric", line) from None


def parse_bvh_document(text: str) -> BvhDocument:
    lines = _Lines(text)
    _expect(lines, "HIERARCHY")
    joints: list[BvhJoint] = []

    def parse_joint(parent: int, line: int, tokens: list[str]):
        if len(tokens) < 2:
            raise BvhParseError("joint declaration is missing a name", line)
        name = " ".join(tokens[1:])
        _expect(lines, "{")
        offset = _read_offset(lines)
        ch_line, ch_tokens = _expect(lines, "CHANNELS")
        try:
            declared = int(ch_tokens[1])
        except (IndexError, ValueError):
            raise BvhParseError("CHANNELS needs a count", ch_line) from None
        channels = ch_tokens[2:]
        if len(channels) != declared:
            raise BvhParseError(
                f"CHANNELS declares {declared} names but lists {len(channels)}", ch_line
            )
        for ch in channels:
            if ch not in _POSITION_CHANNELS and ch not in _ROTATION_AXES:
                raise BvhParseError(f"unknown channel name {ch!r}", ch_line)
        index = len(joints)
        joints.append(BvhJoint(name, parent, offset, channels))
        while True:
            line, tokens = lines.next()
            if tokens[0] == "}":
                return
            if tokens[0] == "JOINT":
                parse_joint(index, line, tokens)
            elif tokens[0] == "End" and len(tokens) > 1 and tokens[1] == "Site":
                _expect(lines, "{")
                joints[index].end_site = _read_offset(lines)
                _expect(lines, "}")
            else:
                raise BvhParseError(f"unexpected token {tokens[0]!r} in joint body", line)

    line, tokens = lines.next()
    if tokens[0] != "ROOT":
        raise BvhParseError(f"expected ROOT, found {tokens[0]!r}", line)
    parse_joint(-1, line, tokens)

    _expect(lines, "MOTION")
    line, tokens = _expect(lines, "Frames:")
    try:
        declared_frames = int(tokens[1])
    except (IndexError, ValueError):
        raise BvhParseError("Frames: needs an integer count", line) from None
    line, tokens = lines.next()
    if tokens[:2] != ["Frame", "Time:"]:
        raise BvhParseError("expected 'Frame Time:'", line)
    try:
        frame_time = float(tokens[2])
    except (IndexError, ValueError):
        raise BvhParseError("Frame Time: needs a number", line) from None
    if frame_time <= 0:
        raise BvhParseError("frame time must be positive", line)

    total_channels = sum(len(j.channels) for j in joints)
    rows = []
    for line, tokens in lines.remaining():
        if len(tokens) != total_channels:
            raise BvhParseError(
                f"frame row has {len(tokens)} values, expected {total_channels}", line
            )
        try:
            row = np.array([float(v) for v in tokens])
        except ValueError:
            raise BvhParseError("frame row contains a non-numeric value", line) from None
        if not np.all(np.isfinite(row)):
            raise BvhParseError("frame row contains a non-finite value", line)
        rows.append(row)
    if len(rows) != declared_frames:
        raise BvhParseError(
            f"MOTION declares {declared_frames} frames but provides {len(rows)}",
            len(lines._raw),
        )
    values = np.stack(rows) if rows else np.zeros((0, total_channels))
    return BvhDocument(joints, frame_time, values)


def _axis_rotation(axis: int, degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    m = np.eye(3)
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    m[i, i] = c
    m[j, j] = c
    m[i, j] = -s
    m[j, i] = s
    return m


def forward_kinematics(doc: BvhDocument, up_axis: str = "y") -> RawPoseSequence:
    """World joint positions and rotations per frame, canonical up-last frame."""
    joint_count = len(doc.joints)
    starts = np.cumsum([0] + [len(j.channels) for j in doc.joints[:-1]])
    positions = np.empty((doc.frame_count, joint_count, 3))
    rotations = np.empty((doc.frame_count, joint_count, 3, 3))
    for f in range(doc.frame_count):
        row = doc.channel_values[f]
        for j, joint in enumerate(doc.joints):
            values = row[starts[j] : starts[j] + len(joint.channels)]
            translation = joint.offset.copy()
            local = np.eye(3)
            for ch, value in zip(joint.channels, values):
                if ch in _POSITION_CHANNELS:
                    translation[_POSITION_CHANNELS[ch]] += value
                else:
                    local = local @ _axis_rotation(_ROTATION_AXES[ch], value)
            if joint.parent < 0:
                positions[f, j] = translation
                rotations[f, j] = local
            else:
                p = joint.parent
                positions[f, j] = positions[f, p] + rotations[f, p] @ translation
                rotations[f, j] = rotations[f, p] @ local
    basis = _basis(up_axis)
    positions = positions @ basis.T
    rotations = basis @ rotations @ basis.T
    return RawPoseSequence(positions, rotations, doc.fps)


def parse_bvh(text: str, up_axis: str = "y") -> tuple[SkeletonSpec, RawPoseSequence]:
    """Parse a BVH document and run forward kinematics."""
    doc = parse_bvh_document(text)
    return doc.skeleton(up_axis), forward_kinematics(doc, up_axis)


def _euler_zxy_degrees(rotation: np.ndarray) -> tuple[float, float, float]:
    """Angles (z, x, y) with R = Rz @ Rx @ Ry, for the exporter."""
    x = np.arcsin(np.clip(rotation[2, 1], -1.0, 1.0))
    if abs(rotation[2, 1]) < 0.9999:
        z = np.arctan2(-rotation[0, 1], rotation[1, 1])
        y = np.arctan2(-rotation[2, 0], rotation[2, 2])
    else:  # gimbal lock: fold everything into z
        z = np.arctan2(rotation[1, 0], rotation[0, 0])
        y = 0.0
    return tuple(np.rad2deg([z, x, y]))


def write_bvh(
    skeleton: SkeletonSpec,
    root_positions: np.ndarray,
    world_rotations: np.ndarray,
    fps: float,
    up_axis: str = "y",
) -> str:
    """Minimal exporter for visual inspection.

    Writes the skeleton's rest offsets with per-joint rotations derived from
    world rotation matrices (canonical frame); joint translations beyond the
    root are dropped, so generated position drift is not representable here.
    """
    basis_inv = _basis(up_axis).T
    j_count = skeleton.joint_count
    children: list[list[int]] = [[] for _ in range(j_count)]
    for j in range(1, j_count):
        children[skeleton.parent[j]].append(j)

    lines = ["HIERARCHY"]

    def emit(j: int, depth: int):
        indent = "  " * depth
        tag = "ROOT" if j == 0 else "JOINT"
        lines.append(f"{indent}{tag} {skeleton.joint_names[j]}")
        lines.append(f"{indent}{{")
        off = basis_inv @ skeleton.reference_offsets[j]
        lines.append(f"{indent}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if j == 0:
            lines.append(
                f"{indent}  CHANNELS 6 Xposition Yposition Zposition"
                " Zrotation Xrotation Yrotation"
            )
        else:
            lines.append(f"{indent}  CHANNELS 3 Zrotation Xrotation Yrotation")
        if not children[j]:
            site = skeleton.end_sites.get(j)
            site = basis_inv @ site if site is not None else np.zeros(3)
            lines.append(f"{indent}  End Site")
            lines.append(f"{indent}  {{")
            lines.append(f"{indent}    OFFSET {site[0]:.6f} {site[1]:.6f} {site[2]:.6f}")
            lines.append(f"{indent}  }}")
        for c in children[j]:
            emit(c, depth + 1)
        lines.append(f"{indent}}}")

    emit(0, 0)
    frames = root_positions.shape[0]
    lines.append("MOTION")
    lines.append(f"Frames: {frames}")
    lines.append(f"Frame Time: {1.0 / fps:.8f}")
    for f in range(frames):
        row = []
        root = basis_inv @ root_positions[f]
        row.extend(f"{v:.6f}" for v in root)
        for j in range(j_count):
            world = basis_inv @ world_rotations[f, j] @ basis_inv.T
            parent = skeleton.parent[j]
            if parent >= 0:
                parent_world = basis_inv @ world_rotations[f, parent] @ basis_inv.T
                local = parent_world.T @ world
            else:
                local = world
            row.extend(f"{v:.6f}" for v in _euler_zxy_degrees(local))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"
