"""Run configuration: one YAML tree shared by every entry point.

The default tree is generated from the dataclass defaults, so the shipped
example file and the code cannot drift apart. A config file overlays the
defaults; ``--set a.b.c=value`` overrides overlay both, with values parsed
as YAML scalars.
"""

from __future__ import annotations

import copy
from dataclasses import asdict
from pathlib import Path

import yaml

from .control.actions import ActionSpec
from .control.envs import EnvConfig
from .control.ppo import PpoConfig
from .diffusion import TrainConfig
from .errors import ConfigError
from .synthesis import RolloutSettings


def default_config() -> dict:
    env = asdict(EnvConfig())
    # keep the tree YAML-native so a written file loads back identically
    env["height_range"] = list(env["height_range"])
    env["speed_range"] = list(env["speed_range"])
    return {
        "train": asdict(TrainConfig()),
        "env": env,
        "ppo": asdict(PpoConfig()),
        "action": {
            "correction_steps": [4, 3, 2, 1],
            "channels": None,
            "scale": 0.25,
            "shared": True,
            "kind": "correction",
        },
        "rollout": asdict(RolloutSettings()),
        "greedy": {
            "k": 500,
            "max_steps": 500,
            "reach_radius": 0.3,
            "target": [3.048, 3.048],
        },
        "policy": {"hidden": [64, 64], "init_std": 0.5},
        "eval": {
            "rollouts": 20,
            "rollout_frames": 300,
            "greedy_trials": 0,
            "latency_iters": 20,
            "ddim_count": None,
        },
        "serve": {
            "host": "127.0.0.1",
            "port": 8765,
            "fps": None,
            "mode": "random",
            "queue": 8,
            "candidates": 48,
        },
    }


def _merge(base: dict, extra: dict, path: str = "") -> None:
    for key, value in extra.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, where)
        else:
            base[key] = value


def _apply_override(cfg: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form path=value")
    dotted, raw = spec.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {spec!r} has an empty path")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override value {raw!r} is not valid: {exc}")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"unknown config section {key!r} in {spec!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def load_config(path=None, overrides: "tuple | list" = ()) -> dict:
    """Defaults, overlaid with an optional YAML file, then overrides."""
    cfg = copy.deepcopy(default_config())
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        try:
            tree = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}")
        if not isinstance(tree, dict):
            raise ConfigError("config file must hold a mapping at top level")
        _merge(cfg, tree)
    for spec in overrides:
        _apply_override(cfg, spec)
    return cfg


def write_default_config(path) -> None:
    with open(Path(path), "w") as fh:
        yaml.safe_dump(default_config(), fh, sort_keys=True,
                       default_flow_style=False)


def _build(cls, tree: dict, **extra):
    try:
        return cls(**{**tree, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__} settings: {exc}")


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    return _build(TrainConfig, cfg["train"], seed=seed)


def env_config_from(cfg: dict) -> EnvConfig:
    tree = dict(cfg["env"])
    for key in ("height_range", "speed_range"):
        tree[key] = tuple(tree[key])
    return _build(EnvConfig, tree)


def ppo_config_from(cfg: dict, seed: int) -> PpoConfig:
    return _build(PpoConfig, cfg["ppo"], seed=seed)


def action_spec_from(cfg: dict, feature_dim: int) -> ActionSpec:
    tree = dict(cfg["action"])
    tree["feature_dim"] = feature_dim
    return ActionSpec.from_json(tree)


def rollout_settings_from(cfg: dict) -> RolloutSettings:
    return _build(RolloutSettings, cfg["rollout"])
