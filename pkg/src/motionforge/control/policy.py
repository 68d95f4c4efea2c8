"""Gaussian controller: actor/critic MLPs over frame + task observations.

The actor outputs the mean of a diagonal Gaussian over raw actions; a
state-independent log-std vector (clamped to [-5, 1]) sets the spread.
Squashing and placement of the action happen downstream in ActionSpec, so
the distribution here stays a plain Gaussian with closed-form log-density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointShapeError
from ..nets import MlpParams, init_mlp, mlp_forward
from .actions import ActionSpec

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LOG_2PI = float(np.log(2.0 * np.pi))


def _sizes(params: MlpParams) -> list:
    return [int(w.shape[0]) for w in params.weights] + \
        [int(params.weights[-1].shape[1])]


@dataclass
class PolicyBundle:
    """Everything needed to run (and checkpoint) one task controller."""

    actor: MlpParams
    critic: MlpParams
    log_std: np.ndarray
    spec: ActionSpec
    obs_dim: int
    task: str = "target"
    extra: dict = field(default_factory=dict)

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.actor.weights, self.actor.biases,
                           np.asarray(obs, dtype=np.float64))

    def value(self, obs: np.ndarray) -> np.ndarray:
        out = mlp_forward(self.critic.weights, self.critic.biases,
                          np.asarray(obs, dtype=np.float64))
        return out[..., 0]

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mean = self.mean_action(obs)
        std = self.std
        z = (np.asarray(actions) - mean) / std
        return (-0.5 * np.sum(z * z, axis=-1)
                - np.sum(np.log(std))
                - 0.5 * self.action_dim * LOG_2PI)

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            deterministic: bool = False) -> tuple:
        """Sample an action; returns (action, log_prob, value)."""
        obs = np.asarray(obs, dtype=np.float64)
        mean = self.mean_action(obs)
        if deterministic:
            action = mean
        else:
            action = mean + self.std * rng.standard_normal(mean.shape)
        return action, self.log_prob(obs, action), self.value(obs)

    # --- checkpoint container hooks ---

    def checkpoint_meta(self, provenance: "dict | None" = None) -> dict:
        return {
            "task": self.task,
            "obs_dim": self.obs_dim,
            "action_spec": self.spec.to_json(),
            "actor_sizes": _sizes(self.actor),
            "critic_sizes": _sizes(self.critic),
            "extra": self.extra,
            "provenance": provenance or {},
        }

    def checkpoint_tensors(self) -> list:
        named = []
        for tag, params in (("actor", self.actor), ("critic", self.critic)):
            for i, (w, b) in enumerate(zip(params.weights, params.biases)):
                named.append((f"{tag}_w{i}", w))
                named.append((f"{tag}_b{i}", b))
        named.append(("log_std", self.log_std))
        return named

    @classmethod
    def from_checkpoint(cls, meta: dict, tensors: dict) -> "PolicyBundle":
        spec = ActionSpec.from_json(meta["action_spec"])
        nets = {}
        for tag in ("actor", "critic"):
            sizes = [int(s) for s in meta[f"{tag}_sizes"]]
            params = MlpParams()
            for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                w = tensors[f"{tag}_w{i}"]
                b = tensors[f"{tag}_b{i}"]
                if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                    raise CheckpointShapeError(
                        f"{tag} layer {i}: got {w.shape}/{b.shape}, "
                        f"declared ({fan_in}, {fan_out})")
                params.weights.append(w)
                params.biases.append(b)
            nets[tag] = params
        log_std = tensors["log_std"]
        if log_std.shape != (spec.action_dim,):
            raise CheckpointShapeError(
                f"log_std shape {log_std.shape} vs action dim {spec.action_dim}")
        return cls(nets["actor"], nets["critic"], log_std, spec,
                   int(meta["obs_dim"]), meta.get("task", "target"),
                   dict(meta.get("extra", {})))


def make_policy(rng: np.random.Generator, obs_dim: int, spec: ActionSpec,
                hidden: tuple = (64, 64), task: str = "target",
                init_std: float = 0.5) -> PolicyBundle:
    """Fresh actor/critic pair; the actor's head starts near zero so the
    untrained controller barely perturbs the sampler."""
    sizes = [obs_dim, *hidden]
    actor = init_mlp(rng, sizes + [spec.action_dim])
    actor.weights[-1] *= 0.01
    actor.biases[-1][:] = 0.0
    critic = init_mlp(rng, sizes + [1])
    log_std = np.full(spec.action_dim, float(np.log(init_std)))
    return PolicyBundle(actor, critic, log_std, spec, obs_dim, task)
