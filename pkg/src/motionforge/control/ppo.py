"""Clipped-surrogate policy optimization for the sampler controllers.

On-policy loop: collect a fixed window of environment steps, estimate
advantages with GAE, then take several clipped-surrogate epochs over
shuffled minibatches. Actor (plus log-std) and critic get separate Adam
optimizers. Learning curves are kept per iteration and can be written as
CSV for plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..errors import TrainingError
from ..nets import mlp_forward
from ..optim import Adam
from ..rng import Stream, philox
from .policy import LOG_2PI, LOG_STD_MAX, LOG_STD_MIN, PolicyBundle


@dataclass
class PpoConfig:
    """Optimization knobs; env-side reward weights live in EnvConfig."""

    iterations: int = 50
    horizon: int = 1024
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 1e-3
    max_grad_norm: "float | None" = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0 or not 0.0 < self.lam < 1.0:
            raise ValueError("gamma and lambda must lie in (0, 1)")
        if self.clip <= 0.0:
            raise ValueError("clip ratio must be positive")


def collect_window(env, policy: PolicyBundle, steps: int,
                   rng: np.random.Generator) -> dict:
    """Roll the policy in the env for a fixed number of steps.

    The env resets itself whenever an episode ends; episode statistics
    (return, length, success) are gathered for the learning curve.
    """
    obs_buf = np.empty((steps, policy.obs_dim))
    act_buf = np.empty((steps, policy.action_dim))
    logp_buf = np.empty(steps)
    rew_buf = np.empty(steps)
    val_buf = np.empty(steps)
    done_buf = np.zeros(steps)
    episodes = []
    obs = env.observation()
    ep_return, ep_len = 0.0, 0
    for i in range(steps):
        action, logp, value = policy.act(obs, rng)
        obs_buf[i] = obs
        act_buf[i] = action
        logp_buf[i] = logp
        val_buf[i] = value
        obs, reward, done, info = env.step(action)
        rew_buf[i] = reward
        done_buf[i] = float(done)
        ep_return += reward
        ep_len += 1
        if done:
            episodes.append({
                "return": ep_return,
                "length": ep_len,
                "success": bool(info.get("success", False)),
            })
            obs = env.reset()
            ep_return, ep_len = 0.0, 0
    last_value = float(policy.value(obs))
    return {
        "obs": obs_buf, "actions": act_buf, "logp": logp_buf,
        "rewards": rew_buf, "values": val_buf, "dones": done_buf,
        "last_value": last_value, "episodes": episodes,
        "partial_return": ep_return,
    }


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_value: float, gamma: float, lam: float) -> tuple:
    """Generalized advantage estimates and value targets."""
    steps = rewards.shape[0]
    adv = np.zeros(steps)
    next_value = last_value
    carry = 0.0
    for i in range(steps - 1, -1, -1):
        alive = 1.0 - dones[i]
        delta = rewards[i] + gamma * next_value * alive - values[i]
        carry = delta + gamma * lam * alive * carry
        adv[i] = carry
        next_value = values[i]
    return adv, adv + values


def _actor_loss(policy: PolicyBundle, obs, actions, logp_old, adv, clip,
                entropy_coef):
    tensors = policy.actor.tensors() + [policy.log_std]
    vars_ = [ad.Var(p) for p in tensors]
    weights, biases = vars_[0:-1:2], vars_[1:-1:2]
    log_std = ad.clip(vars_[-1], LOG_STD_MIN, LOG_STD_MAX)
    mean = mlp_forward(weights, biases, obs)
    std = ad.exp(log_std)
    z = (actions - mean) / std
    logp = (-0.5) * ad.sum_(z * z, axis=-1) - ad.sum_(log_std) \
        - 0.5 * actions.shape[1] * LOG_2PI
    ratio = ad.exp(logp - logp_old)
    clipped = ad.clip(ratio, 1.0 - clip, 1.0 + clip)
    surrogate = ad.minimum(ratio * adv, clipped * adv)
    entropy = ad.sum_(log_std) + 0.5 * actions.shape[1] * (1.0 + LOG_2PI)
    loss = (-1.0) * ad.mean(surrogate) - entropy_coef * entropy
    return loss, tensors, vars_, float(ad.mean(ratio).value)


def _critic_loss(policy: PolicyBundle, obs, returns):
    tensors = policy.critic.tensors()
    vars_ = [ad.Var(p) for p in tensors]
    weights, biases = vars_[0::2], vars_[1::2]
    pred = mlp_forward(weights, biases, obs)[..., 0]
    diff = pred - returns
    return ad.mean(diff * diff), tensors, vars_


def ppo_update(policy: PolicyBundle, batch: dict, config: PpoConfig,
               actor_opt: Adam, critic_opt: Adam,
               rng: np.random.Generator) -> dict:
    """One full PPO update over the collected window."""
    adv, returns = compute_gae(batch["rewards"], batch["values"],
                               batch["dones"], batch["last_value"],
                               config.gamma, config.lam)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = batch["obs"].shape[0]
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "updates": 0}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            pick = order[start:start + config.minibatch]
            obs = batch["obs"][pick]
            actions = batch["actions"][pick]
            loss, tensors, vars_, _ = _actor_loss(
                policy, obs, actions, batch["logp"][pick], adv[pick],
                config.clip, config.entropy_coef)
            if not np.isfinite(float(loss.value)):
                raise TrainingError("non-finite PPO surrogate loss")
            loss.backward()
            actor_opt.step(tensors, [v.grad for v in vars_])
            vloss, vtensors, vvars = _critic_loss(policy, obs, returns[pick])
            if not np.isfinite(float(vloss.value)):
                raise TrainingError("non-finite value loss")
            vloss.backward()
            critic_opt.step(vtensors, [v.grad for v in vvars])
            stats["actor_loss"] += float(loss.value)
            stats["critic_loss"] += float(vloss.value)
            stats["updates"] += 1
    stats["actor_loss"] /= max(1, stats["updates"])
    stats["critic_loss"] /= max(1, stats["updates"])
    return stats


def train_policy(env, policy: PolicyBundle, config: PpoConfig,
                 progress=None) -> tuple:
    """Run PPO for the configured iterations; returns (policy, curves).

    Each curve row reports the completed episodes of that iteration's
    window; if none finished, the running partial return stands in so the
    curve has no holes.
    """
    action_rng = philox(config.seed, Stream.POLICY)
    shuffle_rng = philox(config.seed, Stream.POLICY, substream=1)
    actor_opt = Adam(config.actor_lr, max_grad_norm=config.max_grad_norm)
    critic_opt = Adam(config.critic_lr, max_grad_norm=config.max_grad_norm)
    curves = []
    for iteration in range(config.iterations):
        batch = collect_window(env, policy, config.horizon, action_rng)
        stats = ppo_update(policy, batch, config, actor_opt, critic_opt,
                           shuffle_rng)
        episodes = batch["episodes"]
        if episodes:
            mean_return = float(np.mean([e["return"] for e in episodes]))
            mean_length = float(np.mean([e["length"] for e in episodes]))
            success = float(np.mean([e["success"] for e in episodes]))
        else:
            mean_return = float(batch["partial_return"])
            mean_length = float(config.horizon)
            success = 0.0
        row = {
            "iteration": iteration,
            "mean_return": mean_return,
            "episode_length": mean_length,
            "success_rate": success,
            "actor_loss": stats["actor_loss"],
            "critic_loss": stats["critic_loss"],
        }
        curves.append(row)
        if progress:
            progress(row)
    return policy, curves


CURVE_FIELDS = ("iteration", "mean_return", "episode_length", "success_rate")


def write_learning_curve(path, curves: list) -> None:
    """CSV with one row per PPO iteration."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_FIELDS)
        for row in curves:
            writer.writerow([row[k] for k in CURVE_FIELDS])
