"""Per-frame conditional denoising diffusion.

The model learns p(x_f | x_{f-1}) as a small DDPM over single normalized
frames: noise the target frame, predict the noise conditioned on the
previous frame and a step embedding, and at synthesis time run the reverse
chain once per output frame. Two training phases are provided: plain
denoising score matching over frame pairs, and a rollout phase that feeds
generated frames back in autoregressively and backpropagates through the
whole reverse chain to tame drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import GenerationError, TrainingError
from .motion import NormalizationStats, denormalize, normalize
from .nets import (
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN,
    DEFAULT_LAYERS,
    DenoiserParams,
    denoiser_forward,
    init_denoiser,
    time_embedding,
)
from .optim import Adam
from .rng import Stream, philox
from .skeleton import SkeletonSpec

X0_CLAMP = 6.0  # bound on the per-step clean-frame estimate, in std units
DEFAULT_STEPS = 16


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule for T denoising steps; index i holds step t=i+1."""

    timesteps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if not (self.beta > 0).all() or not (self.beta < 1).all():
            raise ValueError("beta values must lie in (0, 1)")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must decrease strictly")

    def alpha_bar_at(self, t) -> np.ndarray:
        """Cumulative signal fraction at step t, with t=0 meaning clean."""
        full = np.concatenate([[1.0], self.alpha_bar])
        return full[t]

    def posterior(self, t: int) -> tuple:
        """Coefficients (on x0_hat, on x_t) and variance of q(x_{t-1}|...)."""
        ab_t = self.alpha_bar[t - 1]
        ab_prev = 1.0 if t == 1 else self.alpha_bar[t - 2]
        beta_t = self.beta[t - 1]
        coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
        coef_xt = np.sqrt(self.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab_t)
        var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
        return coef_x0, coef_xt, var

    def to_json(self) -> dict:
        return {"timesteps": self.timesteps, "beta": self.beta.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSchedule":
        beta = np.asarray(obj["beta"], dtype=np.float64)
        alpha = 1.0 - beta
        return cls(int(obj["timesteps"]), beta, alpha, np.cumprod(alpha))


def make_schedule(timesteps: int, kind: str = "cosine") -> NoiseSchedule:
    """Build a noise schedule; cosine reaches near-pure noise even at T=16."""
    if timesteps < 1:
        raise ValueError("a schedule needs at least one step")
    if kind == "cosine":
        s = 0.008
        t = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos((t / timesteps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        bar = f / f[0]
        beta = np.clip(1.0 - bar[1:] / bar[:-1], 0.0, 0.999)
    elif kind == "linear":
        scale = 1000.0 / timesteps
        beta = np.linspace(scale * 1e-4, min(scale * 0.02, 0.999), timesteps)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    return NoiseSchedule(timesteps, beta, alpha, np.cumprod(alpha))


def q_sample(schedule: NoiseSchedule, x0: np.ndarray, t,
             eps: np.ndarray) -> np.ndarray:
    """Jump straight to noise level t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    t = np.asarray(t)
    if ((t < 1) | (t > schedule.timesteps)).any():
        raise ValueError(f"step index out of range 1..{schedule.timesteps}")
    ab = schedule.alpha_bar[t - 1]
    if ab.ndim:
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


@dataclass
class ControlHook:
    """Per-step interventions applied to the clean-frame estimate.

    corrections[t] is added to x0_hat at denoising step t; afterwards any
    channel under inpaint_mask is overwritten with inpaint_values. All
    values live in normalized feature space.
    """

    inpaint_mask: "np.ndarray | None" = None
    inpaint_values: "np.ndarray | None" = None
    corrections: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.inpaint_mask is None) != (self.inpaint_values is None):
            raise ValueError("inpaint mask and values must come together")
        if self.inpaint_mask is not None:
            self.inpaint_mask = np.asarray(self.inpaint_mask, dtype=bool)
            self.inpaint_values = np.asarray(self.inpaint_values,
                                             dtype=np.float64)
            if self.inpaint_mask.shape != self.inpaint_values.shape:
                raise ValueError("inpaint mask and values differ in shape")
        for t, vec in self.corrections.items():
            if not np.isfinite(vec).all():
                raise ValueError(f"correction at step {t} is not finite")

    @property
    def correction_steps(self) -> tuple:
        return tuple(sorted(self.corrections, reverse=True))


@dataclass
class AmdmModel:
    """Schedule + denoiser + the statistics that define normalized space."""

    schedule: NoiseSchedule
    denoiser: DenoiserParams
    stats: NormalizationStats
    skeleton: SkeletonSpec
    fps: float

    def __post_init__(self):
        d = self.denoiser.feature_dim
        if d != self.stats.dim:
            raise ValueError(
                f"denoiser width {d} != stats dimension {self.stats.dim}")

    @property
    def feature_dim(self) -> int:
        return self.denoiser.feature_dim


def _apply_hook(x0, t: int, hook: "ControlHook | None"):
    if hook is None:
        return x0
    correction = hook.corrections.get(t)
    if correction is not None:
        x0 = x0 + correction
    if hook.inpaint_mask is not None:
        keep = (~hook.inpaint_mask).astype(np.float64)
        x0 = x0 * keep + hook.inpaint_mask * hook.inpaint_values
    return x0


def _reverse_step(weights, biases, schedule: NoiseSchedule, x_t, x_prev,
                  t: int, z, hook: "ControlHook | None" = None,
                  embed_dim: int = DEFAULT_EMBED_DIM):
    """One p_sample update; works on ndarrays or autodiff Vars."""
    batch = np.shape(x_t if not isinstance(x_t, ad.Var) else x_t.value)[0]
    emb = np.broadcast_to(time_embedding(float(t), embed_dim), (batch, embed_dim))
    eps = denoiser_forward(weights, biases, x_t, x_prev, emb)
    ab_t = schedule.alpha_bar[t - 1]
    x0 = (x_t - np.sqrt(1.0 - ab_t) * eps) * (1.0 / np.sqrt(ab_t))
    x0 = ad.clip(x0, -X0_CLAMP, X0_CLAMP)
    x0 = _apply_hook(x0, t, hook)
    if t == 1:
        return x0
    coef_x0, coef_xt, var = schedule.posterior(t)
    return coef_x0 * x0 + coef_xt * x_t + np.sqrt(var) * z


def p_sample_step(model: AmdmModel, x_prev: np.ndarray, x_t: np.ndarray,
                  t: int, rng: np.random.Generator,
                  hook: "ControlHook | None" = None) -> np.ndarray:
    """Public single reverse step in normalized space."""
    if not 1 <= t <= model.schedule.timesteps:
        raise ValueError(f"step {t} outside 1..{model.schedule.timesteps}")
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    x_prev = np.atleast_2d(np.asarray(x_prev, dtype=np.float64))
    z = rng.standard_normal(x_t.shape) if t > 1 else None
    out = _reverse_step(model.denoiser.weights, model.denoiser.biases,
                        model.schedule, x_t, x_prev, t, z, hook,
                        model.denoiser.embed_dim)
    if not np.isfinite(out).all():
        raise GenerationError(f"non-finite frame at denoising step {t}")
    return out


def generate_frame(model: AmdmModel, x_prev: np.ndarray,
                   rng: np.random.Generator,
                   hook: "ControlHook | None" = None,
                   initial_noise: "np.ndarray | None" = None) -> np.ndarray:
    """Sample the next raw frame given the previous raw frame.

    x_prev may be a single frame [D] or a batch [B, D]; the result matches.
    initial_noise, when given, replaces the x_T ~ N(0, I) draw (normalized
    space), which is how noise-level control policies steer the sampler.
    """
    single = np.ndim(x_prev) == 1
    prev = np.atleast_2d(np.asarray(x_prev, dtype=np.float64))
    prev_n = normalize(prev, model.stats)
    shape = prev_n.shape
    if initial_noise is not None:
        x = np.broadcast_to(np.asarray(initial_noise, dtype=np.float64),
                            shape).copy()
    else:
        x = rng.standard_normal(shape)
    schedule = model.schedule
    for t in range(schedule.timesteps, 0, -1):
        z = rng.standard_normal(shape) if t > 1 else None
        x = _reverse_step(model.denoiser.weights, model.denoiser.biases,
                          schedule, x, prev_n, t, z, hook,
                          model.denoiser.embed_dim)
        if not np.isfinite(x).all():
            raise GenerationError(f"non-finite frame at denoising step {t}")
    out = denormalize(x, model.stats)
    return out[0] if single else out


def ddim_step_sequence(timesteps: int, count: int) -> "list[int]":
    """Descending step subsequence for a DDIM pass with `count` updates."""
    if not 1 <= count <= timesteps:
        raise ValueError(f"DDIM step count must lie in 1..{timesteps}")
    steps = np.unique(np.round(np.linspace(timesteps, 1, count)).astype(int))
    return [int(s) for s in steps[::-1]]


def ddim_generate_frame(model: AmdmModel, x_prev: np.ndarray,
                        rng: np.random.Generator, count: int,
                        hook: "ControlHook | None" = None) -> np.ndarray:
    """Deterministic strided sampler: `count` denoiser calls per frame."""
    single = np.ndim(x_prev) == 1
    prev = np.atleast_2d(np.asarray(x_prev, dtype=np.float64))
    prev_n = normalize(prev, model.stats)
    schedule = model.schedule
    steps = ddim_step_sequence(schedule.timesteps, count)
    x = rng.standard_normal(prev_n.shape)
    nexts = steps[1:] + [0]
    for t, t_next in zip(steps, nexts):
        batch = x.shape[0]
        emb = np.broadcast_to(
            time_embedding(float(t), model.denoiser.embed_dim),
            (batch, model.denoiser.embed_dim))
        eps = denoiser_forward(model.denoiser.weights, model.denoiser.biases,
                               x, prev_n, emb)
        ab_t = schedule.alpha_bar[t - 1]
        x0 = (x - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        x0 = np.clip(x0, -X0_CLAMP, X0_CLAMP)
        x0 = _apply_hook(x0, t, hook)
        ab_next = schedule.alpha_bar_at(t_next)
        x = np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps
        if not np.isfinite(x).all():
            raise GenerationError(f"non-finite frame at DDIM step {t}")
    out = denormalize(x, model.stats)
    return out[0] if single else out


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    """Two-phase training settings."""

    ddpm_epochs: int = 200
    rollout_epochs: int = 20
    rollout_length: int = 4
    batch: int = 256
    lr: float = 1e-3
    rollout_lr: "float | None" = None
    warmup_steps: int = 300
    seed: int = 0
    timesteps: int = DEFAULT_STEPS
    schedule: str = "cosine"
    hidden: int = DEFAULT_HIDDEN
    layers: int = DEFAULT_LAYERS
    embed_dim: int = DEFAULT_EMBED_DIM
    steps_per_epoch: "int | None" = None
    rollout_batch: int = 64
    rollout_steps_per_epoch: "int | None" = None
    detach_rollout_frames: bool = False
    max_grad_norm: "float | None" = None

    def __post_init__(self):
        if self.rollout_length < 1:
            raise ValueError("rollout length must be at least 1")
        if self.ddpm_epochs < 0 or self.rollout_epochs < 0:
            raise ValueError("epoch counts cannot be negative")

    def resolved_rollout_lr(self) -> float:
        """Rollout phase fine-tunes a trained net, so it runs cooler."""
        if self.rollout_lr is not None:
            return self.rollout_lr
        return self.lr / 5.0


def train_step(model: AmdmModel, optimizer: Adam, x_prev: np.ndarray,
               x_target: np.ndarray, rng: np.random.Generator) -> float:
    """One denoising-score-matching update on a batch of frame pairs."""
    batch = x_prev.shape[0]
    schedule = model.schedule
    t = rng.integers(1, schedule.timesteps + 1, size=batch)
    eps = rng.standard_normal(x_target.shape)
    x_t = q_sample(schedule, x_target, t, eps)
    emb = time_embedding(t.astype(np.float64), model.denoiser.embed_dim)
    tensors = model.denoiser.tensors()
    vars_ = [ad.Var(p) for p in tensors]
    weights, biases = vars_[0::2], vars_[1::2]
    pred = denoiser_forward(weights, biases, x_t, x_prev, emb)
    diff = pred - eps
    loss = (diff * diff).mean()
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError("non-finite denoising loss")
    loss.backward()
    optimizer.step(tensors, [v.grad for v in vars_])
    return value


@dataclass
class RolloutNoise:
    """Frozen noise for a rollout window: one x_T and T-1 step draws per frame."""

    initial: np.ndarray  # [R, B, D]
    steps: np.ndarray    # [R, T-1, B, D], ordered t = T .. 2


def draw_rollout_noises(rng: np.random.Generator, batch: int, horizon: int,
                        timesteps: int, dim: int) -> RolloutNoise:
    initial = rng.standard_normal((horizon, batch, dim))
    steps = rng.standard_normal((horizon, max(timesteps - 1, 0), batch, dim))
    return RolloutNoise(initial, steps)


def rollout_loss(weights, biases, schedule: NoiseSchedule,
                 windows: np.ndarray, noises: RolloutNoise,
                 embed_dim: int = DEFAULT_EMBED_DIM,
                 detach_frames: bool = False):
    """Mean MSE of R autoregressively generated frames vs. ground truth.

    windows is [B, R+1, D] normalized; gradients flow through every
    denoising step, and (unless detached) through the frame feedback too.
    """
    horizon = windows.shape[1] - 1
    x_prev = windows[:, 0, :]
    total = None
    for r in range(horizon):
        x = noises.initial[r]
        for t in range(schedule.timesteps, 0, -1):
            z = noises.steps[r, schedule.timesteps - 1 - t] \
                if t > 1 else None
            x = _reverse_step(weights, biases, schedule, x, x_prev, t, z,
                              None, embed_dim)
        diff = x - windows[:, r + 1, :]
        term = (diff * diff).mean()
        total = term if total is None else total + term
        if detach_frames and isinstance(x, ad.Var):
            x_prev = x.value
        else:
            x_prev = x
    return total * (1.0 / horizon)


def rollout_train_step(model: AmdmModel, optimizer: Adam,
                       windows: np.ndarray,
                       rng: np.random.Generator,
                       detach_frames: bool = False) -> float:
    """One rollout-phase update on a batch of R+1 frame windows."""
    batch, length, dim = windows.shape
    noises = draw_rollout_noises(rng, batch, length - 1,
                                 model.schedule.timesteps, dim)
    tensors = model.denoiser.tensors()
    vars_ = [ad.Var(p) for p in tensors]
    weights, biases = vars_[0::2], vars_[1::2]
    loss = rollout_loss(weights, biases, model.schedule, windows, noises,
                        model.denoiser.embed_dim, detach_frames)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingError("non-finite rollout loss")
    loss.backward()
    optimizer.step(tensors, [v.grad for v in vars_])
    return value


def train_model(dataset, config: TrainConfig,
                progress=None) -> tuple:
    """Run both training phases; returns (model, loss history per phase)."""
    from .dataset import MotionDataset  # local import to avoid a cycle

    assert isinstance(dataset, MotionDataset)
    schedule = make_schedule(config.timesteps, config.schedule)
    init_rng = philox(config.seed, Stream.INIT)
    denoiser = init_denoiser(init_rng, dataset.feature_count, config.hidden,
                             config.layers, config.embed_dim)
    model = AmdmModel(schedule, denoiser, dataset.stats, dataset.skeleton,
                      dataset.fps)
    steps = config.steps_per_epoch
    if steps is None:
        steps = max(1, int(np.ceil(dataset.frame_count / config.batch)))
    history = {"ddpm": [], "rollout": []}

    def ramp(base: float, step: int) -> float:
        if config.warmup_steps <= 0:
            return base
        return base * min(1.0, step / config.warmup_steps)

    batch_rng = philox(config.seed, Stream.TRAIN_BATCH)
    noise_rng = philox(config.seed, Stream.TRAIN_NOISE)
    opt = Adam(config.lr, max_grad_norm=config.max_grad_norm)
    taken = 0
    for epoch in range(config.ddpm_epochs):
        losses = []
        for _ in range(steps):
            taken += 1
            opt.lr = ramp(config.lr, taken)
            prev, target = dataset.sample_pairs(batch_rng, config.batch)
            losses.append(train_step(model, opt, prev, target, noise_rng))
        history["ddpm"].append(float(np.mean(losses)))
        if progress:
            progress("ddpm", epoch, history["ddpm"][-1])

    # No warmup here: this phase fine-tunes an already-trained net, and a
    # full chain step costs ~R*T denoiser evals, so the budget is separate.
    opt = Adam(config.resolved_rollout_lr(),
               max_grad_norm=config.max_grad_norm)
    rollout_steps = config.rollout_steps_per_epoch
    if rollout_steps is None:
        rollout_steps = max(1, int(np.ceil(dataset.frame_count
                                           / config.rollout_batch)))
    for epoch in range(config.rollout_epochs):
        losses = []
        for _ in range(rollout_steps):
            windows = dataset.sample_windows(batch_rng, config.rollout_batch,
                                             config.rollout_length)
            losses.append(rollout_train_step(model, opt, windows, noise_rng,
                                             config.detach_rollout_frames))
        history["rollout"].append(float(np.mean(losses)))
        if progress:
            progress("rollout", epoch, history["rollout"][-1])
    return model, history
