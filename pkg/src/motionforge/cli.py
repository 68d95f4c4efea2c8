"""Command-line entry points.

One executable, one subcommand per pipeline stage: ingest BVH files into
a dataset container, train the frame model, roll it out (free or
constrained),
drive it toward a target, train a steering policy, score a model, and
serve interactive sessions. Every subcommand takes an optional YAML
config, repeatable ``--set path=value`` overrides, and a required
``--seed``; all failures exit nonzero with a one-line reason.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import MotionDataset, ingest_directory
from .diffusion import ControlHook, train_model
from .errors import ConfigError, MotionForgeError
from .metrics import ablation_run, evaluate_model, write_report_csv
from .rng import Stream, philox
from .synthesis import (
    export_bvh,
    export_dataset,
    greedy_target_run,
    rollout_inpaint,
    rollout_random,
)

_ROOT_CHANNELS = {"d_x": 0, "d_y": 1, "d_r": 2}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="FILE",
                        help="YAML config overlaying the built-in defaults")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="PATH=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, required=True,
                        help="random seed for every stream of this run")


def _load_model(path):
    obj = load_checkpoint(path)
    if obj.__class__.__name__ != "AmdmModel":
        raise ConfigError(f"{path} is not a frame-model checkpoint")
    return obj


def _parse_constraint(spec: str, feature_dim: int) -> tuple[int, float]:
    if "=" not in spec:
        raise ConfigError(f"constraint {spec!r} is not of the form ch=value")
    name, raw = spec.split("=", 1)
    name = name.strip()
    if name in _ROOT_CHANNELS:
        index = _ROOT_CHANNELS[name]
    elif name.startswith("f") and name[1:].isdigit():
        index = int(name[1:])
    else:
        raise ConfigError(
            f"unknown channel {name!r}: use d_x, d_y, d_r or f<index>")
    if not 0 <= index < feature_dim:
        raise ConfigError(f"channel index {index} out of range")
    try:
        return index, float(raw)
    except ValueError:
        raise ConfigError(f"constraint value {raw!r} is not a number")


def _constraint_hook(model, pairs: list) -> ControlHook:
    """Pin raw-unit channel values for every frame of a rollout."""
    mask = np.zeros(model.feature_dim, dtype=bool)
    values = np.zeros(model.feature_dim)
    for index, value in pairs:
        mask[index] = True
        values[index] = value
    normalized = (values - model.stats.mean) / model.stats.std
    return ControlHook(inpaint_mask=mask,
                       inpaint_values=np.where(mask, normalized, 0.0))


def _write_rollout(result, out: Path) -> None:
    if out.suffix.lower() == ".bvh":
        export_bvh(result, out)
    else:
        export_dataset(result, out)


def cmd_ingest(args, cfg) -> int:
    dataset = ingest_directory(args.bvh_dir, up_axis=args.up_axis)
    dataset.save(args.out)
    print(f"ingested {dataset.clip_count} clips, {dataset.frame_count} "
          f"frames, {dataset.feature_count} channels -> {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    dataset = MotionDataset.load(args.dataset)
    train_cfg = config_mod.train_config_from(cfg, args.seed)

    def report(phase, epoch, loss):
        if args.quiet:
            return
        total = (train_cfg.ddpm_epochs if phase == "ddpm"
                 else train_cfg.rollout_epochs)
        print(f"{phase} epoch {epoch + 1}/{total} loss {loss:.5f}",
              flush=True)

    model, history = train_model(dataset, train_cfg, progress=report)
    provenance = {"command": "train", "dataset": str(args.dataset),
                  "seed": args.seed}
    save_checkpoint(model, args.out, provenance=provenance)
    first, last = history["ddpm"][0], history["ddpm"][-1]
    print(f"done: ddpm loss {first:.5f} -> {last:.5f} "
          f"({last / first:.1%}), saved {args.out}")
    return 0


def _initial_frame(model, args):
    if args.dataset:
        dataset = MotionDataset.load(args.dataset)
        key = args.clip if args.clip is not None else 0
        if isinstance(key, str) and key.isdigit():
            key = int(key)
        return dataset.clip(key).frames[0]
    return model.stats.mean.copy()


def cmd_rollout(args, cfg) -> int:
    model = _load_model(args.model)
    settings = config_mod.rollout_settings_from(cfg)
    pairs = [_parse_constraint(s, model.feature_dim)
             for s in args.constrain]
    if pairs:
        hook = _constraint_hook(model, pairs)
        result = rollout_inpaint(model, _initial_frame(model, args),
                                 [hook] * args.frames, seed=args.seed,
                                 settings=settings,
                                 ddim_count=args.ddim_steps)
    else:
        result = rollout_random(model, _initial_frame(model, args),
                                args.frames, seed=args.seed,
                                settings=settings,
                                ddim_count=args.ddim_steps)
    _write_rollout(result, Path(args.out))
    status = (f"failed at frame {result.failure_frame}" if result.failed
              else "completed")
    print(f"{status}: {len(result.clip)} frames -> {args.out}")
    return 1 if result.failed and not args.keep_going else 0


def cmd_sample_task(args, cfg) -> int:
    model = _load_model(args.model)
    greedy = cfg["greedy"]
    target = args.target if args.target else greedy["target"]
    run = greedy_target_run(
        model, _initial_frame(model, args), tuple(target),
        max_steps=args.max_steps or greedy["max_steps"],
        k=args.k or greedy["k"], seed=args.seed,
        reach_radius=greedy["reach_radius"],
        settings=config_mod.rollout_settings_from(cfg),
        ddim_count=args.ddim_steps)
    if args.out:
        _write_rollout(run.result, Path(args.out))
    print(json.dumps({
        "success": run.success, "steps": run.steps,
        "path_length": round(run.path_length, 4),
        "final_distance": round(run.final_distance, 4),
        "failed": run.result.failed,
    }))
    return 0 if run.success else 1


def cmd_train_policy(args, cfg) -> int:
    from .control import envs as envs_mod
    from .control import make_policy, train_policy, write_learning_curve

    model = _load_model(args.model)
    tasks = {"target": envs_mod.TargetEnv, "joystick": envs_mod.JoystickEnv,
             "path": envs_mod.PathEnv}
    if args.task not in tasks:
        raise ConfigError(f"unknown task {args.task!r}; "
                          f"choose from {sorted(tasks)}")
    spec = config_mod.action_spec_from(cfg, model.feature_dim)
    env = tasks[args.task](model, spec, config_mod.env_config_from(cfg),
                          seed=args.seed,
                          init_frame=_initial_frame(model, args))
    obs_dim = env.reset().shape[0]
    policy = make_policy(philox(args.seed, Stream.POLICY, index=1),
                         obs_dim, spec, tuple(cfg["policy"]["hidden"]),
                         task=args.task,
                         init_std=cfg["policy"]["init_std"])
    ppo_cfg = config_mod.ppo_config_from(cfg, args.seed)

    def report(row):
        if not args.quiet:
            print(f"iter {row['iteration'] + 1}/{ppo_cfg.iterations} "
                  f"return {row['mean_return']:.3f} "
                  f"success {row['success_rate']:.2f}", flush=True)

    policy, curves = train_policy(env, policy, ppo_cfg, progress=report)
    save_checkpoint(policy, args.out,
                    provenance={"command": "train-policy",
                                "task": args.task, "seed": args.seed})
    if args.curve:
        write_learning_curve(args.curve, curves)
    print(f"saved policy -> {args.out}")
    return 0


def cmd_eval(args, cfg) -> int:
    model = _load_model(args.model)
    dataset = MotionDataset.load(args.dataset)
    ev = cfg["eval"]
    if args.ablation:
        base = config_mod.train_config_from(cfg, args.seed)
        reports = ablation_run(
            dataset, base,
            eval_kwargs={"rollouts": ev["rollouts"],
                         "rollout_frames": ev["rollout_frames"],
                         "seed": args.seed,
                         "latency_iters": ev["latency_iters"]},
            progress=None if args.quiet else
            (lambda report: print(report.summary(), flush=True)))
    else:
        reports = [evaluate_model(
            model, dataset, label=args.label,
            rollouts=ev["rollouts"], rollout_frames=ev["rollout_frames"],
            greedy_trials=ev["greedy_trials"], seed=args.seed,
            ddim_count=ev["ddim_count"], latency_iters=ev["latency_iters"])]
    write_report_csv(args.out, reports)
    for report in reports:
        print(report.summary())
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args, cfg) -> int:
    from .server import run_server

    model = _load_model(args.model)
    policies = {}
    for spec in args.policy:
        if "=" not in spec:
            raise ConfigError(
                f"--policy {spec!r} is not of the form task=checkpoint")
        task, path = spec.split("=", 1)
        policies[task.strip()] = load_checkpoint(path)
    serve = cfg["serve"]
    host = args.host or serve["host"]
    port = args.port if args.port is not None else serve["port"]
    run_server(model, policies=policies, host=host, port=port,
               fps=serve["fps"], seed=args.seed,
               queue_limit=serve["queue"], candidates=serve["candidates"],
               init_frame=_initial_frame(model, args), mode=serve["mode"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionforge",
        description="train and drive a real-time motion diffusion model")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("ingest", help="parse a BVH directory into a dataset")
    p.add_argument("--bvh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--up-axis", default="y", choices=("y", "z"))
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the frame model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout",
                       help="sample a motion clip, free or constrained")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True,
                   help=".bvh for viewers, anything else saves a dataset")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--constrain", action="append", default=[],
                   metavar="CH=VALUE",
                   help="pin a channel in raw units, e.g. d_x=0.033")
    p.add_argument("--dataset", default=None,
                   help="take the first frame of this dataset as the seed pose")
    p.add_argument("--clip", default=None,
                   help="clip name or index inside --dataset")
    p.add_argument("--ddim-steps", type=int, default=None)
    p.add_argument("--keep-going", action="store_true",
                   help="exit 0 even if the rollout tripped the failure check")
    _add_common(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("sample-task",
                       help="drive toward a planar target, best-of-K")
    p.add_argument("--model", required=True)
    p.add_argument("--target", type=float, nargs=2, default=None,
                   metavar=("X", "Y"))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--clip", default=None)
    p.add_argument("--ddim-steps", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sample_task)

    p = sub.add_parser("train-policy",
                       help="train a PPO steering policy on a task")
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True,
                   choices=("target", "joystick", "path"))
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None,
                   help="also write the learning curve CSV here")
    p.add_argument("--dataset", default=None)
    p.add_argument("--clip", default=None)
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("eval", help="score a trained model against a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--ablation", action="store_true",
                   help="run the timestep/depth/stride sweep instead")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve interactive websocket sessions")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", action="append", default=[],
                   metavar="TASK=CKPT",
                   help="steering policy per task (repeatable)")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--dataset", default=None,
                   help="take the first frame of this dataset as the seed pose")
    p.add_argument("--clip", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_serve)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = config_mod.load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except MotionForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
