"""Mapping from raw policy outputs to sampler interventions.

A policy steers generation in one of two ways: "correction" actions become
per-step offsets on the clean-frame estimate (tanh-squashed and scaled), and
"noise" actions replace the initial x_T draw outright. The second exists as
a baseline action space for convergence comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion import ControlHook

DEFAULT_STEPS = (4, 3, 2, 1)


@dataclass(frozen=True)
class ActionSpec:
    """Shape and placement of the policy's influence on the sampler.

    With shared=True one squashed vector is applied at every listed
    denoising step; otherwise the action carries a separate vector per
    step. channels narrows the correction to a feature subset; scale is
    the per-channel bound in normalized units.
    """

    feature_dim: int
    correction_steps: tuple = DEFAULT_STEPS
    channels: "np.ndarray | None" = None
    scale: float = 0.25
    shared: bool = True
    kind: str = "correction"

    def __post_init__(self):
        if self.kind not in ("correction", "noise"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        steps = tuple(int(t) for t in self.correction_steps)
        if self.kind == "correction":
            if not steps:
                raise ValueError("correction actions need at least one step")
            if any(t < 1 for t in steps) or len(set(steps)) != len(steps):
                raise ValueError("correction steps must be distinct and >= 1")
        object.__setattr__(self, "correction_steps", steps)
        if self.channels is not None:
            mask = np.asarray(self.channels, dtype=bool)
            if mask.shape != (self.feature_dim,):
                raise ValueError("channel mask must be one flag per feature")
            if not mask.any():
                raise ValueError("channel mask selects nothing")
            object.__setattr__(self, "channels", mask)
        if not float(self.scale) > 0.0:
            raise ValueError("scale must be positive")

    @property
    def channel_count(self) -> int:
        if self.channels is None:
            return self.feature_dim
        return int(self.channels.sum())

    @property
    def action_dim(self) -> int:
        if self.kind == "noise":
            return self.feature_dim
        if self.shared:
            return self.channel_count
        return len(self.correction_steps) * self.channel_count

    def _expand(self, vec: np.ndarray) -> np.ndarray:
        """Squash one channel-subset vector out to a full-width correction."""
        squashed = np.tanh(vec) * self.scale
        if self.channels is None:
            return squashed
        full = np.zeros(self.feature_dim)
        full[self.channels] = squashed
        return full

    def apply(self, raw: np.ndarray) -> tuple:
        """Turn a raw policy output into (hook, initial_noise).

        Exactly one element of the pair is non-None, matching the two
        ways generate_frame accepts steering.
        """
        raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        if raw.shape != (self.action_dim,):
            raise ValueError(
                f"action has {raw.shape[0]} dims, spec wants {self.action_dim}")
        if self.kind == "noise":
            return None, raw.copy()
        if self.shared:
            correction = self._expand(raw)
            corrections = {t: correction for t in self.correction_steps}
        else:
            per_step = raw.reshape(len(self.correction_steps),
                                   self.channel_count)
            corrections = {t: self._expand(v)
                           for t, v in zip(self.correction_steps, per_step)}
        return ControlHook(corrections=corrections), None

    def to_json(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "correction_steps": list(self.correction_steps),
            "channels": None if self.channels is None
            else self.channels.astype(int).tolist(),
            "scale": float(self.scale),
            "shared": self.shared,
            "kind": self.kind,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ActionSpec":
        channels = obj.get("channels")
        return cls(
            feature_dim=int(obj["feature_dim"]),
            correction_steps=tuple(obj["correction_steps"]),
            channels=None if channels is None else np.asarray(channels, bool),
            scale=float(obj["scale"]),
            shared=bool(obj["shared"]),
            kind=obj.get("kind", "correction"),
        )
