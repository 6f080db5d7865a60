"""Command-line entry point.

Subcommands: prepare, train-pose, train-pace, eval-shortterm, loss-compare,
generate, stats, serve. Exit codes: 0 success, 2 usage, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from .bvh import ParseError
from .config import load_config
from .data import InconsistentWidth, MissingData
from .gait import DegeneratePath, IncompatibleSkeleton, InsufficientContacts
from .nn import NonFiniteGradient, NonFiniteLoss
from .quat import DegenerateQuaternion

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ERRORS = (MissingData, FileNotFoundError, ParseError, InconsistentWidth,
               DegeneratePath, InsufficientContacts, IncompatibleSkeleton)
NUMERIC_ERRORS = (NonFiniteLoss, NonFiniteGradient, DegenerateQuaternion)


def _overrides(args):
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = str(args.seed)
    return cfg


def cmd_prepare(args):
    from . import bench

    if args.synthetic:
        manifest, skeleton, clips = bench.prepare_synthetic(
            args.out, preset=args.synthetic, seed=args.seed or 0,
            clips=args.clips, frames=args.frames, frame_rate=args.frame_rate,
            freq_band=(args.freq_lo, args.freq_hi), joints=args.joints,
            distal_noise=args.distal_noise, upper_motion=args.upper_motion,
        )
    else:
        if not args.data:
            raise SystemExit("prepare needs --data DIR or --synthetic PRESET")
        manifest, skeleton, clips = bench.prepare_real(
            args.data, args.protocol, args.out, seed=args.seed or 0,
            test_subject=args.test_subject, overrides_path=args.overrides,
        )
    by_action = {}
    for clip in clips:
        entry = by_action.setdefault(clip.action, [0, 0])
        entry[0] += 1
        entry[1] += clip.frames
    print(f"prepared {len(clips)} clips, {skeleton.joint_count} joints -> {args.out}")
    for action in sorted(by_action):
        n, frames = by_action[action]
        print(f"  {action}: {n} clips, {frames} frames")
    return 0


def cmd_train_pose(args):
    from . import bench

    result = bench.train_pose_command(args.manifest, args.out, _overrides(args))
    print(f"trained {result.epochs_done} epochs; final loss {result.history[-1]:.6f}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_train_pace(args):
    from . import bench

    history = bench.train_pace_command(args.manifest, args.out, _overrides(args))
    print(f"trained {len(history)} epochs; final MAE {history[-1]:.6f}")
    print(f"checkpoint -> {args.out}")
    return 0


def cmd_eval_shortterm(args):
    from . import bench

    report = bench.eval_short_term(
        args.manifest,
        checkpoint=args.checkpoint,
        baseline=args.baseline,
        seed=args.seed or 0,
        sequences_per_action=args.sequences,
        n_condition=args.n,
        out_prefix=args.out,
    )
    print(report["table"])
    if args.out:
        print(f"report -> {args.out}.txt / {args.out}.csv")
    return 0


def cmd_loss_compare(args):
    from . import bench

    results = bench.loss_compare(args.manifest, args.out, _overrides(args))
    for arm, info in results.items():
        status = f"aborted ({info['aborted']})" if info["aborted"] else "completed"
        print(f"{arm}: {status}; final position metric "
              f"{info['final_position_metric']:.6f}, angle metric {info['final_angle_metric']:.6f}")
    print(f"curves -> {args.out}/curves.csv")
    return 0


def cmd_generate(args):
    from . import bench

    out = bench.generate_command(
        args.trajectory, args.speed, args.pose, args.pace, args.out,
        seed=args.seed or 0, pace_mode=args.pace_mode,
    )
    n = len(out["frames"])
    fr = out["clip"].frame_rate
    print(f"generated {n} frames ({n / fr:.2f} s) -> {out['bvh']} / {out['csv']}")
    return 0


def cmd_stats(args):
    from . import bench

    feet = tuple(args.feet.split(",")) if args.feet else ("LeftFoot", "RightFoot")
    info = bench.dataset_stats(args.manifest, args.out, feet=feet)
    print(f"angle fraction outside [-pi/2, pi/2]: {info['overall_outside']:.4f}")
    print(f"stats -> {args.out}/angle_histogram.csv, angle_stats.csv, gait_histogram.csv")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    host, _, port = args.listen.rpartition(":")
    app = create_app(args.checkpoint_dir, max_sessions=args.max_sessions,
                     frame_rate=args.frame_rate)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="quatmotion")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="ingest a dataset or build a synthetic one")
    sp.add_argument("--data", help="data directory (h36m/ or locomotion/ inside)")
    sp.add_argument("--protocol", choices=["h36m_short_term", "locomotion"],
                    default="h36m_short_term")
    sp.add_argument("--synthetic", choices=["biped", "chain"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--clips", type=int, default=12)
    sp.add_argument("--frames", type=int, default=300)
    sp.add_argument("--frame-rate", type=float, default=25.0)
    sp.add_argument("--freq-lo", type=float, default=0.8)
    sp.add_argument("--freq-hi", type=float, default=1.2)
    sp.add_argument("--joints", type=int, default=4)
    sp.add_argument("--distal-noise", type=float, default=0.0,
                    help="end-effector rotation jitter, radians")
    sp.add_argument("--upper-motion", type=float, default=0.0,
                    help="biped: three-axis torso/head swing scale")
    sp.add_argument("--test-subject")
    sp.add_argument("--overrides", help="skeleton override file (mirror pairs, euler orders)")
    sp.set_defaults(func=cmd_prepare)

    for name, func in (("train-pose", cmd_train_pose), ("train-pace", cmd_train_pace)):
        sp = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a prepared dataset")
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")
        sp.add_argument("--seed", type=int)
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval-shortterm", help="short-term angle-error benchmark table")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", choices=["zero_velocity", "run_avg2", "run_avg4"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sequences", type=int, default=8)
    sp.add_argument("--n", type=int, help="conditioning frames for baselines")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval_shortterm)

    sp = sub.add_parser("loss-compare", help="angle-loss vs positional-loss twin training")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_loss_compare)

    sp = sub.add_parser("generate", help="generate locomotion along a trajectory file")
    sp.add_argument("--trajectory", required=True, help="text file, one 'x y' per line")
    sp.add_argument("--speed", type=float, required=True)
    sp.add_argument("--pose", required=True, help="pose checkpoint")
    sp.add_argument("--pace", required=True, help="pace checkpoint")
    sp.add_argument("--out", required=True, help="output prefix (.bvh / _positions.csv)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--pace-mode", choices=["bidirectional", "delayed"], default="bidirectional")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("stats", help="angle and gait distribution statistics")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--feet", help="comma-separated left,right foot joint names")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("serve", help="run the streaming generation service")
    sp.add_argument("--listen", default="127.0.0.1:8080")
    sp.add_argument("--checkpoint-dir", required=True)
    sp.add_argument("--max-sessions", type=int, default=8)
    sp.add_argument("--frame-rate", type=float)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DATA_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
