"""Real-time autoregressive motion synthesis.

A compact per-frame diffusion model generates the next pose of a skeletal
character from the previous one, a few denoising steps at a time, fast
enough to drive an interactive session. On top of the frame model sit
three steering layers: best-of-K candidate selection against a score,
per-channel constraint painting inside the denoising loop, and learned
correction policies trained with PPO.
"""

from .checkpoint import checkpoint_meta, load_checkpoint, save_checkpoint
from .dataset import MotionDataset
from .diffusion import (
    AmdmModel,
    ControlHook,
    TrainConfig,
    ddim_generate_frame,
    generate_frame,
    make_schedule,
    train_model,
)
from .errors import MotionForgeError
from .metrics import ade, apd, evaluate_model, latency_bench, rigid_deviation
from .motion import FeatureLayout, MotionClip, WorldRootState, integrate_root
from .skeleton import SkeletonSpec
from .synthesis import (
    CandidateScorer,
    GreedyRunResult,
    RolloutResult,
    RolloutSettings,
    export_bvh,
    export_dataset,
    foot_slide,
    greedy_target_run,
    rollout_inpaint,
    rollout_random,
    sample_task_oriented,
)

__version__ = "0.1.0"

__all__ = [
    "AmdmModel",
    "CandidateScorer",
    "ControlHook",
    "FeatureLayout",
    "GreedyRunResult",
    "MotionClip",
    "MotionDataset",
    "MotionForgeError",
    "RolloutResult",
    "RolloutSettings",
    "SkeletonSpec",
    "TrainConfig",
    "WorldRootState",
    "__version__",
    "ade",
    "apd",
    "checkpoint_meta",
    "ddim_generate_frame",
    "evaluate_model",
    "export_bvh",
    "export_dataset",
    "foot_slide",
    "generate_frame",
    "greedy_target_run",
    "integrate_root",
    "latency_bench",
    "load_checkpoint",
    "make_schedule",
    "rigid_deviation",
    "rollout_inpaint",
    "rollout_random",
    "sample_task_oriented",
    "save_checkpoint",
    "train_model",
]
