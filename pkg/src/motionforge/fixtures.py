"""Procedural motion fixtures.

Real mocap is not shipped with the package; tests, demos, and desk-scale
training runs use a deterministic 13-joint walker whose gait is generated
analytically and written as ordinary BVH text. The generator couples step
frequency to speed so planted feet are (nearly) still in world space,
which gives the data genuine contact structure for foot-slide checks.

All lengths are meters, BVH files are Y-up, the character faces +Z.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

THIGH = 0.42
SHIN = 0.40
LEG = THIGH + SHIN
HIP_HALF_WIDTH = 0.10

_HIERARCHY = f"""HIERARCHY
ROOT Hips
{{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Yrotation Xrotation Zrotation
  JOINT Spine
  {{
    OFFSET 0 0.25 0
    CHANNELS 3 Yrotation Xrotation Zrotation
    JOINT Head
    {{
      OFFSET 0 0.35 0
      CHANNELS 3 Yrotation Xrotation Zrotation
      End Site
      {{
        OFFSET 0 0.12 0
      }}
    }}
    JOINT LeftShoulder
    {{
      OFFSET 0.18 0.28 0
      CHANNELS 3 Yrotation Xrotation Zrotation
      JOINT LeftHand
      {{
        OFFSET 0 -0.50 0
        CHANNELS 3 Yrotation Xrotation Zrotation
        End Site
        {{
          OFFSET 0 -0.05 0
        }}
      }}
    }}
    JOINT RightShoulder
    {{
      OFFSET -0.18 0.28 0
      CHANNELS 3 Yrotation Xrotation Zrotation
      JOINT RightHand
      {{
        OFFSET 0 -0.50 0
        CHANNELS 3 Yrotation Xrotation Zrotation
        End Site
        {{
          OFFSET 0 -0.05 0
        }}
      }}
    }}
  }}
  JOINT LeftHip
  {{
    OFFSET {HIP_HALF_WIDTH} 0 0
    CHANNELS 3 Yrotation Xrotation Zrotation
    JOINT LeftKnee
    {{
      OFFSET 0 -{THIGH} 0
      CHANNELS 3 Yrotation Xrotation Zrotation
      JOINT LeftFoot
      {{
        OFFSET 0 -{SHIN} 0
        CHANNELS 3 Yrotation Xrotation Zrotation
        End Site
        {{
          OFFSET 0 -0.04 0.12
        }}
      }}
    }}
  }}
  JOINT RightHip
  {{
    OFFSET -{HIP_HALF_WIDTH} 0 0
    CHANNELS 3 Yrotation Xrotation Zrotation
    JOINT RightKnee
    {{
      OFFSET 0 -{THIGH} 0
      CHANNELS 3 Yrotation Xrotation Zrotation
      JOINT RightFoot
      {{
        OFFSET 0 -{SHIN} 0
        CHANNELS 3 Yrotation Xrotation Zrotation
        End Site
        {{
          OFFSET 0 -0.04 0.12
        }}
      }}
    }}
  }}
}}
"""

JOINT_ORDER = [
    "Hips", "Spine", "Head", "LeftShoulder", "LeftHand", "RightShoulder",
    "RightHand", "LeftHip", "LeftKnee", "LeftFoot", "RightHip", "RightKnee",
    "RightFoot",
]

FOOT_JOINTS = ("LeftFoot", "RightFoot")
CONTACT_HEIGHT = 0.03  # foot-contact threshold used by the slide metric


def _swing_amplitude(speed: float) -> float:
    return float(np.clip(0.30 + 0.12 * speed, 0.12, 0.55))


def _thigh_wave(phase: float) -> float:
    # Sine flattened toward a triangle so the stance-phase sweep rate is
    # closer to constant, which keeps the planted foot near-still.
    return 0.9 * np.sin(phase) - 0.1 * np.sin(3.0 * phase)


def _phase_rate(speed: float, amplitude: float) -> float:
    # Planted-foot condition: the stance foot's backward sweep speed
    # LEG * A * |dwave/dphase| * phase_rate should cancel the root speed;
    # 0.75 is the wave's typical mid-stance slope.
    return speed / (LEG * amplitude * 0.75)


@dataclass
class GaitProfile:
    """Speed and turn-rate commands over time for one generated clip."""

    duration: float
    speed: "np.ndarray | float" = 1.0
    turn_rate: "np.ndarray | float" = 0.0  # rad/s, positive turns left

    def sampled(self, fps: float) -> tuple[np.ndarray, np.ndarray]:
        n = int(round(self.duration * fps))
        speed = np.broadcast_to(np.asarray(self.speed, dtype=float), (n,))
        turn = np.broadcast_to(np.asarray(self.turn_rate, dtype=float), (n,))
        return speed.copy(), turn.copy()


def ramp(n: int, *segments: tuple[float, float]) -> np.ndarray:
    """Piecewise-linear profile through (fraction_of_clip, value) points."""
    xs = np.array([s[0] for s in segments])
    ys = np.array([s[1] for s in segments])
    return np.interp(np.linspace(0.0, 1.0, n), xs, ys)


def walker_bvh(profile: GaitProfile, fps: float = 30.0) -> str:
    """Generate one BVH clip of the procedural walker."""
    speed, turn = profile.sampled(fps)
    n = speed.shape[0]
    dt = 1.0 / fps

    heading = np.cumsum(turn * dt)  # radians about +Y, 0 faces +Z
    phase = np.zeros(n)
    for i in range(1, n):
        amp = _swing_amplitude(speed[i - 1])
        phase[i] = phase[i - 1] + _phase_rate(speed[i - 1], amp) * dt

    # Root path: integrate commanded velocity along the facing direction.
    pos = np.zeros((n, 2))  # (x, z) in the BVH world
    for i in range(1, n):
        fwd = np.array([np.sin(heading[i - 1]), np.cos(heading[i - 1])])
        pos[i] = pos[i - 1] + speed[i - 1] * dt * fwd

    def leg_angles(phi, amp, bend, walking):
        """Thigh pitch and knee flexion for one leg at gait phase phi."""
        alpha = amp * _thigh_wave(phi) * walking
        c = np.cos(phi)
        beta = bend * max(0.0, c) ** 1.5
        if c > 0.0 and alpha > 0.0:
            # Forward half of swing: the leg must stay bent past the point
            # where it would poke through the floor (beta >= 2 * alpha),
            # snapping straight only at heel strike.
            s = ((phi + 0.5 * np.pi) % (2.0 * np.pi)) / np.pi
            rolloff = min(1.0, (1.0 - s) / 0.06)
            clearance = (2.0 * alpha + 0.3 * walking * np.sin(np.pi * s)) * rolloff
            beta = max(beta, clearance)
        return alpha, beta

    def leg_extent(alpha, beta):
        """Vertical hip-to-ankle drop for the given leg angles."""
        return THIGH * np.cos(alpha) + SHIN * np.cos(alpha - beta)

    rows = []
    for i in range(n):
        amp = _swing_amplitude(speed[i])
        walking = min(1.0, speed[i] / 0.2)  # fades gait out near standstill
        bend = min(1.0 + 0.2 * speed[i], 1.6) * walking
        alpha_l, beta_l = leg_angles(phase[i], amp, bend, walking)
        alpha_r, beta_r = leg_angles(phase[i] + np.pi, amp, bend, walking)
        # Hip height rides whichever leg reaches lower, so that foot sits
        # exactly on the ground and the other clears it.
        hip_height = max(leg_extent(alpha_l, beta_l), leg_extent(alpha_r, beta_r))
        sway = 0.012 * np.sin(phase[i]) * walking
        breathe = 0.004 * np.sin(2.0 * np.pi * 0.25 * i * dt)
        arm = 0.35 * amp * walking
        arm_l = arm * np.sin(phase[i] + np.pi)
        arm_r = arm * np.sin(phase[i])
        spine_yaw = 0.04 * np.sin(phase[i]) * walking

        deg = np.rad2deg
        lateral = np.array([np.cos(heading[i]), -np.sin(heading[i])]) * sway
        root = pos[i] + lateral
        values = [root[0], hip_height + breathe, root[1], deg(heading[i]), 0.0, 0.0]
        values += [deg(spine_yaw), 0.0, 0.0]                # Spine
        values += [0.0, 0.0, 0.0]                           # Head
        values += [0.0, deg(arm_l), 0.0]                    # LeftShoulder
        values += [0.0, 0.0, 0.0]                           # LeftHand
        values += [0.0, deg(arm_r), 0.0]                    # RightShoulder
        values += [0.0, 0.0, 0.0]                           # RightHand
        values += [0.0, deg(-alpha_l), 0.0]                 # LeftHip
        values += [0.0, deg(beta_l), 0.0]                   # LeftKnee
        values += [0.0, deg(alpha_l - beta_l), 0.0]         # LeftFoot (kept level)
        values += [0.0, deg(-alpha_r), 0.0]                 # RightHip
        values += [0.0, deg(beta_r), 0.0]                   # RightKnee
        values += [0.0, deg(alpha_r - beta_r), 0.0]         # RightFoot
        rows.append(" ".join(f"{v:.6f}" for v in values))

    motion = "MOTION\nFrames: {}\nFrame Time: {:.8f}\n{}\n".format(
        n, 1.0 / fps, "\n".join(rows)
    )
    return _HIERARCHY + motion


def locomotion_profiles(duration_scale: float = 1.0) -> dict[str, GaitProfile]:
    """The stock clip set: walks, speed changes, turns, pivots, idling.

    Coverage is deliberate: turns happen both at walking speed and slowly
    ("pivot", ~0.45 units/s under sharp alternating turn commands), since
    steering tasks need tight direction changes that wide-radius turning
    data alone cannot express.
    """

    def n_of(seconds):
        return int(round(seconds * duration_scale * 30))

    walk_n = n_of(14)
    fast_n = n_of(12)
    turn_n = n_of(16)
    pivot_n = n_of(12)
    stop_n = n_of(12)
    idle_n = n_of(6)
    t = np.linspace(0.0, 1.0, turn_n)
    p = np.linspace(0.0, 1.0, pivot_n)
    return {
        "walk": GaitProfile(walk_n / 30, ramp(walk_n, (0, 0.6), (0.5, 1.1), (1, 0.7))),
        "fast": GaitProfile(fast_n / 30, ramp(fast_n, (0, 1.2), (0.6, 2.0), (1, 1.4))),
        "turns": GaitProfile(
            turn_n / 30, 1.0, 0.8 * np.sin(2.0 * np.pi * 0.35 * t * turn_n / 30)
        ),
        "pivot": GaitProfile(
            pivot_n / 30,
            ramp(pivot_n, (0, 0.6), (0.5, 0.35), (1, 0.6)),
            1.4 * np.sin(2.0 * np.pi * 0.3 * p * pivot_n / 30),
        ),
        "start_stop": GaitProfile(
            stop_n / 30,
            ramp(stop_n, (0, 0.0), (0.2, 0.0), (0.45, 1.2), (0.7, 1.2), (0.95, 0.0), (1, 0.0)),
        ),
        "idle": GaitProfile(idle_n / 30, 0.0),
    }


def write_locomotion_set(directory: str | Path, duration_scale: float = 1.0) -> list[Path]:
    """Write the stock walker clips as BVH files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, profile in locomotion_profiles(duration_scale).items():
        path = directory / f"{name}.bvh"
        path.write_text(walker_bvh(profile))
        paths.append(path)
    return paths


MINIMAL_BVH = """HIERARCHY
ROOT A
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT B
  {
    OFFSET 0 1 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 0.5 0
    }
  }
}
MOTION
Frames: 1
Frame Time: 0.033333
0 0 0 0 0 0 0 0 0
"""


def two_joint_ramp_bvh(n: int = 8) -> str:
    """Two-joint fixture whose root X translation ramps 0,1,2,..."""
    header = MINIMAL_BVH.split("MOTION")[0]
    rows = "\n".join(f"{i} 0 0 0 0 0 0 0 0" for i in range(n))
    return f"{header}MOTION\nFrames: {n}\nFrame Time: 0.033333\n{rows}\n"
