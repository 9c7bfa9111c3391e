"""Command-line interface.

Subcommands: train, meta-train, adapt, eval, export-traj, bench.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .harness import (run_adapt, run_bench, run_eval, run_export_traj,
                      run_meta_train, run_train)


class _Parser(argparse.ArgumentParser):
    # Bad flags are configuration errors: exit 1 per the CLI contract.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None,
                   help="config JSON path or builtin name (smoke, paper)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering PNG figures next to the CSV outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skyroad",
                     description="UAV-UGV network simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy", parents=[])
    _add_common(p)
    p.add_argument("--algo", choices=["a3c", "meta-a3c"], default="a3c")
    p.add_argument("--workers", type=int, default=None, help="worker threads")
    p.add_argument("--serial", action="store_true",
                   help="force the deterministic single-worker mode")
    p.add_argument("--max-updates", type=int, default=None)
    p.add_argument("--meta-iters", type=int, default=None)
    p.add_argument("--inner-steps", type=int, default=None)
    p.add_argument("--meta-batch", type=int, default=None)

    p = sub.add_parser("meta-train", help="meta-train across the task distribution")
    _add_common(p)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--serial", action="store_true")
    p.add_argument("--meta-iters", type=int, default=None)
    p.add_argument("--inner-steps", type=int, default=None)
    p.add_argument("--meta-batch", type=int, default=None)

    p = sub.add_parser("adapt", help="online-adapt a checkpoint to a new task")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task-seed", type=int, required=True)
    p.add_argument("--inner-steps", type=int, default=5)
    p.add_argument("--episodes", type=int, default=5)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the greedy policy")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--sweep-users", default=None,
                   help="comma-separated user counts, e.g. 20,60,100")

    p = sub.add_parser("export-traj", help="export one greedy episode as a table")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task-seed", type=int, required=True)
    p.add_argument("--slots", type=int, default=None)

    p = sub.add_parser("bench", help="per-episode runtime comparison")
    _add_common(p)
    p.add_argument("--reps", type=int, default=5)
    return parser


def _dispatch(args) -> dict:
    figures = not args.no_figures
    if args.command in ("train", "meta-train"):
        cfg = load_config(args.config if args.config else "smoke")
        workers = 1 if getattr(args, "serial", False) else args.workers
        algo = getattr(args, "algo", "meta-a3c")
        if args.command == "meta-train" or algo == "meta-a3c":
            return run_meta_train(cfg, args.out, seed=args.seed, workers=workers,
                                  meta_iters=args.meta_iters,
                                  inner_steps=args.inner_steps,
                                  meta_batch=args.meta_batch,
                                  render_figures=figures)
        return run_train(cfg, args.out, seed=args.seed, workers=workers,
                         max_updates=args.max_updates, render_figures=figures)
    if args.command == "adapt":
        return run_adapt(args.checkpoint, args.task_seed, args.inner_steps, args.out,
                         episodes=args.episodes, config=args.config,
                         render_figures=figures)
    if args.command == "eval":
        sweep = None
        if args.sweep_users:
            sweep = [int(tok) for tok in str(args.sweep_users).split(",") if tok]
        return run_eval(args.checkpoint, args.out, episodes=args.episodes,
                        seed=args.seed, sweep_users=sweep, config=args.config,
                        render_figures=figures)
    if args.command == "export-traj":
        return run_export_traj(args.checkpoint, args.task_seed, args.out,
                               slots=args.slots, config=args.config,
                               render_figures=figures)
    if args.command == "bench":
        cfg = load_config(args.config if args.config else "smoke")
        return run_bench(cfg, args.out, reps=args.reps, render_figures=figures)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        paths = _dispatch(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
