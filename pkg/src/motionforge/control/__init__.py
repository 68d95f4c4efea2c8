"""Task environments, policies, and PPO training for steering the sampler."""

from .actions import ActionSpec
from .envs import (
    EnvConfig,
    JoystickEnv,
    PathEnv,
    TargetEnv,
    build_path,
    effort_penalty,
    path_waypoint,
    reward_joystick,
    rigid_penalty,
)
from .policy import PolicyBundle, make_policy
from .ppo import PpoConfig, train_policy, write_learning_curve

__all__ = [
    "ActionSpec",
    "EnvConfig",
    "JoystickEnv",
    "PathEnv",
    "TargetEnv",
    "build_path",
    "effort_penalty",
    "path_waypoint",
    "reward_joystick",
    "rigid_penalty",
    "PolicyBundle",
    "make_policy",
    "PpoConfig",
    "train_policy",
    "write_learning_curve",
]
