"""Skeleton description: joint tree, rest offsets, reference bone lengths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROOT_PARENT = -1


@dataclass(frozen=True)
class SkeletonSpec:
    """Fixed articulation of a character.

    ``parent[j]`` is the index of joint ``j``'s parent (-1 for the root,
    which must be joint 0). ``reference_offsets`` are the rest-pose bone
    offsets in dataset length units; their norms give the reference bone
    lengths used by the rigid-deviation metric and the rigidity penalty.
    """

    joint_names: tuple[str, ...]
    parent: tuple[int, ...]
    reference_offsets: np.ndarray  # [J, 3]
    end_sites: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        offsets = np.asarray(self.reference_offsets, dtype=np.float64)
        object.__setattr__(self, "reference_offsets", offsets)
        j = len(self.joint_names)
        if len(self.parent) != j or offsets.shape != (j, 3):
            raise ValueError("joint_names, parent and reference_offsets disagree on J")
        if len(set(self.joint_names)) != j:
            raise ValueError("joint names must be unique")
        if self.parent[0] != ROOT_PARENT:
            raise ValueError("joint 0 must be the root")
        for child, par in enumerate(self.parent):
            if child == 0:
                continue
            if not 0 <= par < child:
                raise ValueError(f"parent of joint {child} must precede it (got {par})")
        lengths = np.linalg.norm(offsets[1:], axis=1)
        if np.any(lengths <= 0):
            raise ValueError("non-root reference offsets must have positive length")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def reference_bone_length(self) -> np.ndarray:
        """Rest-pose length of each non-root bone, indexed by child joint - 1."""
        return np.linalg.norm(self.reference_offsets[1:], axis=1)

    def index_of(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def to_json(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parent": list(self.parent),
            "reference_offsets": self.reference_offsets.tolist(),
            "end_sites": {str(k): v.tolist() for k, v in self.end_sites.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonSpec":
        return cls(
            joint_names=tuple(obj["joint_names"]),
            parent=tuple(int(p) for p in obj["parent"]),
            reference_offsets=np.asarray(obj["reference_offsets"], dtype=np.float64),
            end_sites={
                int(k): np.asarray(v, dtype=np.float64)
                for k, v in obj.get("end_sites", {}).items()
            },
        )
