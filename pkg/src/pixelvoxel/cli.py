"""Command-line front end: synth / train / map / eval / gradcheck."""

from __future__ import annotations

import argparse
import os
import sys

from . import autodiff as ad
from .config import PipelineConfig, load_config
from .gradcheck_suite import run_gradient_suite
from .pipeline import evaluate, run_mapping, train_stage, write_metrics
from .synth import synth_scene


def _config_from(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def cmd_synth(args) -> int:
    config = _config_from(args)
    if args.seed is not None:
        config.seed = args.seed
    synth_scene(config.seed, args.frames, config, args.out)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from(args)
    result = train_stage(args.stage, config, args.data, args.out,
                         pixel_ckpt=args.pixel_ckpt, voxel_ckpt=args.voxel_ckpt,
                         log=lambda m: print(m, flush=True))
    if result.diverged:
        print("training diverged; checkpoint holds the last good state")
        return 1
    print(f"wrote checkpoint {result.checkpoint_path}")
    return 0


def cmd_map(args) -> int:
    config = _config_from(args)
    traj = args.traj or os.path.join(args.data, "trajectory.txt")
    stats = run_mapping(args.data, traj, args.ckpt, config, args.out)
    print(f"integrated {stats.frames_integrated} keyframes "
          f"({stats.frames_skipped} skipped, {stats.points_dropped} points dropped) "
          f"at {stats.fps:.2f} frames/s -> {stats.ply_path}")
    return 0


def cmd_eval(args) -> int:
    config = _config_from(args)
    metrics, _cm = evaluate(args.ckpt, args.data, config,
                            holdout_only=not args.all_frames)
    for line in metrics.as_lines():
        print(line)
    if args.out:
        write_metrics(metrics, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    config = _config_from(args)
    results = run_gradient_suite(config, seed=config.seed)
    ok = True
    for name, err, tol in results:
        status = "ok" if err < tol else "FAIL"
        ok &= err < tol
        print(f"{name:32s} max rel err {err:.3e} (tol {tol:.0e}) {status}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixelvoxel",
                                     description="semantic RGB-D mapping pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=["pixel", "voxel", "joint"], required=True)
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pixel-ckpt", dest="pixel_ckpt")
    p.add_argument("--voxel-ckpt", dest="voxel_ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="build a semantic voxel map from keyframes")
    p.add_argument("--data", required=True)
    p.add_argument("--traj")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled frames")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--all-frames", action="store_true",
                   help="evaluate every labeled frame, not just the holdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, ad.ShapeError, ad.NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
