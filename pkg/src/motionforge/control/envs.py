"""Kinematic control tasks wrapped around the frame sampler.

Each environment owns a model, a world anchor, and a task state; stepping
builds the sampler intervention from the policy action, draws the next
frame, integrates the root, and scores the move. Observations are
egocentric: the normalized current frame plus task quantities expressed in
the character's heading frame, so a rigid transform of the whole world
changes nothing the policy sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion import ddim_generate_frame, generate_frame
from ..errors import GenerationError
from ..metrics import bone_lengths
from ..motion import (
    FeatureLayout,
    WorldRootState,
    integrate_root,
    normalize,
    rot2d,
    wrap_angle,
)
from ..rng import Stream, philox
from ..synthesis import RolloutSettings
from .actions import ActionSpec

TWO_PI = 2.0 * np.pi


@dataclass
class EnvConfig:
    """Knobs shared by all tasks; distances are dataset-native units."""

    horizon: int = 1000
    w_prog: float = 1.0
    bonus: float = 20.0
    w_r: float = 1.0
    w_e: float = 0.01
    penalties: bool = True
    reach_radius: float = 0.05
    respawn_half: float = 10.0
    full_observation: bool = False
    target_height: bool = False
    height_range: tuple = (0.8, 1.6)
    height_band: float = 0.1
    head_joint: str = "Head"
    speed_range: tuple = (0.61, 7.32)
    dir_every: int = 120
    speed_every: int = 240
    path_scale: float = 50.0
    path_points: int = 1200
    waypoint_stride: int = 15
    path_window: int = 60
    path_success_fraction: float = 0.1
    ddim_count: "int | None" = None


def rigid_penalty(frame: np.ndarray, skeleton) -> float:
    """Sum of squared bone-length errors against the reference skeleton."""
    layout = FeatureLayout(skeleton.joint_count)
    lengths = bone_lengths(layout.positions(np.asarray(frame)), skeleton)
    gap = lengths - skeleton.reference_bone_length
    return float(np.sum(gap * gap))


def effort_penalty(frame: np.ndarray, joint_count: int) -> float:
    """Movement cost: squared root deltas plus mean squared joint speed."""
    layout = FeatureLayout(joint_count)
    frame = np.asarray(frame)
    root = frame[layout.root_delta]
    vel = layout.velocities(frame)
    return float(np.sum(root * root) + np.mean(np.sum(vel * vel, axis=-1)))


def reward_joystick(realized_dir: float, realized_speed: float,
                    goal_dir: float, goal_speed: float) -> float:
    """Direction and speed agreement, each mapped into (0, 1] and multiplied."""
    direction = np.exp(np.cos(realized_dir - goal_dir) - 1.0)
    speed = np.exp(-abs(realized_speed - goal_speed))
    return float(direction * speed)


def path_waypoint(t: float, scale: float = 50.0, b: float = 2.0) -> np.ndarray:
    """Point on the closed figure-eight course at curve parameter t."""
    s = np.sin(b * np.asarray(t, dtype=np.float64))
    return np.stack([scale * s, scale * s * np.cos(b * np.asarray(t))], axis=-1)


def build_path(n: int = 1200, scale: float = 50.0) -> np.ndarray:
    """n equally spaced course points, [n, 2]; wraps around the full curve."""
    t = TWO_PI * np.arange(n) / n
    return path_waypoint(t, scale)


class ControlEnv:
    """Base loop: action -> intervention -> frame -> root update -> reward.

    Subclasses fill in the task: _reset_task seeds it, _task_obs reports
    it in the heading frame, and _reward scores the transition (and may
    respawn goals or resample commands).
    """

    name = "base"

    def __init__(self, model, spec: ActionSpec, config: "EnvConfig | None" = None,
                 seed: int = 0, init_frame: "np.ndarray | None" = None,
                 generator=None):
        self.model = model
        self.spec = spec
        self.config = config or EnvConfig()
        self.layout = FeatureLayout(model.skeleton.joint_count)
        if spec.feature_dim != self.layout.dim:
            raise ValueError("action spec and model disagree on feature width")
        if init_frame is None:
            init_frame = model.stats.mean.copy()
        self._init_frame = np.asarray(init_frame, dtype=np.float64)
        self._seed = seed
        self._generator = generator
        self._settings = RolloutSettings()
        self._rigid_limit = self._settings.rigid_limit(model.skeleton)
        self._episode = -1
        self.reset()

    @property
    def observation_dim(self) -> int:
        return self._pose_dim + self.task_dim

    @property
    def _pose_dim(self) -> int:
        return self.layout.dim if self.config.full_observation else 3

    @property
    def task_dim(self) -> int:
        raise NotImplementedError

    def reset(self) -> np.ndarray:
        self._episode += 1
        self._task_rng = philox(self._seed, Stream.ENV, index=self._episode)
        self._noise_rng = philox(self._seed, Stream.ENV, index=self._episode,
                                 substream=1)
        self.x = self._init_frame.copy()
        self.state = WorldRootState()
        self.tick = 0
        self._over_limit = 0
        self._reset_task()
        return self.observation()

    def observation(self) -> np.ndarray:
        """Egocentric pose summary followed by the task channels.

        By default the pose part is just the normalized root deltas
        (d_x, d_y, d_r): small observations keep on-policy learning
        sample-efficient, and the root state is what steering actions
        change. full_observation switches to the whole normalized frame.
        """
        frame = normalize(self.x, self.model.stats)
        return np.concatenate([frame[:self._pose_dim],
                               self.task_observation()])

    def task_observation(self) -> np.ndarray:
        return self._task_obs()

    def _heading_frame(self, world_point: np.ndarray) -> np.ndarray:
        delta = np.asarray(world_point) - self.state.position
        return rot2d(self.state.heading).T @ delta

    def _generate(self, hook, initial_noise):
        if self._generator is not None:
            return self._generator(self.x, self._noise_rng, hook, initial_noise)
        if self.config.ddim_count is not None:
            return ddim_generate_frame(self.model, self.x, self._noise_rng,
                                       self.config.ddim_count, hook)
        return generate_frame(self.model, self.x, self._noise_rng, hook,
                              initial_noise=initial_noise)

    def _penalties(self) -> float:
        if not self.config.penalties:
            return 0.0
        return (self.config.w_r * rigid_penalty(self.x, self.model.skeleton)
                + self.config.w_e * effort_penalty(
                    self.x, self.model.skeleton.joint_count))

    def _frame_ok(self, frame: np.ndarray) -> bool:
        """Non-finite kills immediately; rigid drift only when sustained."""
        if not np.isfinite(frame).all():
            return False
        lengths = bone_lengths(self.layout.positions(frame),
                               self.model.skeleton)
        dev = float(np.mean(np.abs(
            lengths - self.model.skeleton.reference_bone_length)))
        if dev > self._rigid_limit:
            self._over_limit += 1
        else:
            self._over_limit = 0
        return self._over_limit < self._settings.patience

    def step(self, action: "np.ndarray | None"):
        """Advance one frame; returns (observation, reward, done, info)."""
        if action is None:
            hook, initial_noise = None, None
        else:
            hook, initial_noise = self.spec.apply(action)
        prev_state = self.state
        try:
            frame = self._generate(hook, initial_noise)
        except GenerationError:
            info = {"failure": True, "success": False, "tick": self.tick}
            return self.observation(), 0.0, True, info
        if not self._frame_ok(frame):
            info = {"failure": True, "success": False, "tick": self.tick}
            return self.observation(), 0.0, True, info
        self.x = frame
        self.state = integrate_root(prev_state, frame)
        self.tick += 1
        reward = self._reward(prev_state)
        done = self.tick >= self.config.horizon
        info = {"failure": False, "tick": self.tick}
        if done:
            info["success"] = self._success()
        return self.observation(), float(reward), done, info

    # --- task template ---

    def _reset_task(self) -> None:
        raise NotImplementedError

    def _task_obs(self) -> np.ndarray:
        raise NotImplementedError

    def _reward(self, prev_state: WorldRootState) -> float:
        raise NotImplementedError

    def _success(self) -> bool:
        raise NotImplementedError


class TargetEnv(ControlEnv):
    """Walk to a marker; reaching pays once and respawns it nearby.

    The optional 3D variant appends the commanded head height to the
    observation and pays the bonus only when the head is inside a band
    around it.
    """

    name = "target"

    @property
    def task_dim(self) -> int:
        return 3 if self.config.target_height else 2

    def _spawn_target(self) -> None:
        half = self.config.respawn_half
        offset = self._task_rng.uniform(-half, half, size=2)
        self.target = self.state.position + offset
        if self.config.target_height:
            lo, hi = self.config.height_range
            self.target_height = float(self._task_rng.uniform(lo, hi))

    def _reset_task(self) -> None:
        self.reached = 0
        self._spawn_target()

    def _task_obs(self) -> np.ndarray:
        obs = self._heading_frame(self.target)
        if self.config.target_height:
            obs = np.append(obs, self.target_height)
        return obs

    def _head_height(self) -> float:
        idx = self.model.skeleton.index_of(self.config.head_joint)
        return float(self.x[self.layout.height_index(idx)] + self.state.ground)

    def _reward(self, prev_state: WorldRootState) -> float:
        before = float(np.linalg.norm(self.target - prev_state.position))
        after = float(np.linalg.norm(self.target - self.state.position))
        reward = self.config.w_prog * (before - after) - self._penalties()
        hit = after < self.config.reach_radius
        if hit and self.config.target_height:
            hit = abs(self._head_height() - self.target_height) \
                <= self.config.height_band
        if hit:
            reward += self.config.bonus
            self.reached += 1
            self._spawn_target()
        return reward

    def _success(self) -> bool:
        return self.reached >= 1


class JoystickEnv(ControlEnv):
    """Follow a commanded world direction and speed that change over time."""

    name = "joystick"

    @property
    def task_dim(self) -> int:
        return 4

    def _reset_task(self) -> None:
        self.goal_dir = float(self._task_rng.uniform(0.0, TWO_PI))
        lo, hi = self.config.speed_range
        self.goal_speed = float(self._task_rng.uniform(lo, hi))
        self._core_sum = 0.0

    def _resample(self) -> None:
        if self.tick % self.config.dir_every == 0:
            self.goal_dir = float(self._task_rng.uniform(0.0, TWO_PI))
        if self.tick % self.config.speed_every == 0:
            lo, hi = self.config.speed_range
            self.goal_speed = float(self._task_rng.uniform(lo, hi))

    def _task_obs(self) -> np.ndarray:
        err = wrap_angle(self.goal_dir - self.state.heading)
        speed = float(np.linalg.norm(self.x[:2])) * self.model.fps
        return np.array([np.sin(err), np.cos(err), speed, self.goal_speed])

    def _reward(self, prev_state: WorldRootState) -> float:
        move = self.state.position - prev_state.position
        speed = float(np.linalg.norm(move)) * self.model.fps
        if speed > 1e-8:
            realized = float(np.arctan2(move[1], move[0]))
        else:
            realized = self.state.heading
        core = reward_joystick(realized, speed, self.goal_dir, self.goal_speed)
        self._core_sum += core
        self._resample()
        return core - self._penalties()

    @property
    def mean_core(self) -> float:
        return self._core_sum / max(1, self.tick)

    def _success(self) -> bool:
        return self.mean_core >= 0.5


class PathEnv(ControlEnv):
    """Track a closed figure-eight course laid out as equally spaced points."""

    name = "path"

    @property
    def task_dim(self) -> int:
        return 8

    def _reset_task(self) -> None:
        self.path = build_path(self.config.path_points, self.config.path_scale)
        start = int(self._task_rng.integers(len(self.path)))
        nxt = self.path[(start + 1) % len(self.path)]
        tangent = nxt - self.path[start]
        self.state = WorldRootState(
            x=float(self.path[start][0]), y=float(self.path[start][1]),
            heading=float(np.arctan2(tangent[1], tangent[0])))
        self.pointer = start
        self.advanced = 0
        spacing = np.linalg.norm(np.diff(self.path, axis=0), axis=1)
        self._spacing = float(spacing.mean())

    def _task_obs(self) -> np.ndarray:
        n = len(self.path)
        stride = self.config.waypoint_stride
        points = [self.path[(self.pointer + stride * k) % n]
                  for k in range(1, 5)]
        return np.concatenate([self._heading_frame(p) for p in points])

    def _nearest_forward(self) -> tuple:
        """Closest course index in the forward window, with its distance."""
        n = len(self.path)
        idx = (self.pointer + np.arange(self.config.path_window + 1)) % n
        dists = np.linalg.norm(self.path[idx] - self.state.position, axis=1)
        best = int(np.argmin(dists))
        return int(idx[best]), float(dists[best]), best

    def _reward(self, prev_state: WorldRootState) -> float:
        nearest, dist, steps = self._nearest_forward()
        self.pointer = nearest
        self.advanced += steps
        progress = self.config.w_prog * self._spacing * steps
        return progress + float(np.exp(-dist)) - self._penalties()

    @property
    def circuit_fraction(self) -> float:
        return self.advanced / len(self.path)

    def _success(self) -> bool:
        return self.circuit_fraction >= self.config.path_success_fraction
