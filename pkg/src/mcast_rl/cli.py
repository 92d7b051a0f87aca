"""Command-line entry point: ``mcast-rl <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .agent import CheckpointError, TrainConfig, TrainingDiverged
from .baselines import OBJECTIVES
from .env import MulticastRequest, RewardConfig
from .topology import default_topology_path

TRAIN_FLAGS = {"lr": "learning_rate", "batch": "batch_size", "gamma": "gamma", "nstep": "n_step",
               "target_update": "target_update", "episodes": "episodes"}


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys use flag spellings (dashes or underscores)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; explicit flags override it")
    p.add_argument("--topology", default=str(default_topology_path()))
    p.add_argument("--snapshots", help="snapshot store (JSONL)")
    p.add_argument("--source", type=int, default=12)
    p.add_argument("--dests", default="2,4,11")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", default="1:0.01", help="finish:step reward scale, e.g. 1:0.01 or 1:-1")
    p.add_argument("--episodes", type=int, default=TrainConfig.episodes)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--gamma", type=float, default=TrainConfig.gamma)
    p.add_argument("--nstep", type=int, default=TrainConfig.n_step)
    p.add_argument("--target-update", type=int, default=TrainConfig.target_update)
    p.add_argument("--conv-channels", default="32,32")
    p.add_argument("--hidden", default="256,128")
    p.add_argument("--indices", help="comma-separated snapshot indices (default: all)")
    p.add_argument("--out", default="runs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcast-rl", description="Multicast tree construction with deep Q-learning.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.set_defaults(_commands=sub.choices)
    p = sub.add_parser("simulate", help="generate a snapshot store")
    _common(p)
    p.add_argument("--count", type=int, default=24)
    p = sub.add_parser("train", help="train an agent on a snapshot store")
    _common(p)
    p = sub.add_parser("evaluate", help="compare the trained policy with KMB and the exact oracle")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--aggregate", action="store_true", help="also write per-method means")
    p = sub.add_parser("install", help="emit the flow table for one snapshot")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--group", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p = sub.add_parser("timing", help="training wall time against snapshot count")
    _common(p)
    p.add_argument("--counts", default="1,2,4,8")
    p.set_defaults(episodes=200)
    p = sub.add_parser("oracle", help="write exact-optimum fixtures")
    _common(p)
    p.add_argument("--objective", default="r_finish", choices=OBJECTIVES)
    return parser


def _flag(value) -> bool:
    return value is True or str(value).strip().lower() in ("1", "true", "yes", "on")


def _ints(text: str | None) -> tuple[int, ...] | None:
    return None if text in (None, "") else tuple(int(x) for x in str(text).split(","))


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = args._commands[args.command]
        known = {a.dest for a in sub._actions}
        try:
            file_values = read_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config file: {exc}")
        unknown = set(file_values) - known
        if unknown:
            parser.error(f"unknown keys in {args.config}: {sorted(unknown)}")
        sub.set_defaults(**file_values)
        args = parser.parse_args(argv)
    return args


def run_config(args: argparse.Namespace) -> harness.RunConfig:
    overrides = {field: type(getattr(TrainConfig, field))(getattr(args, flag)) for flag, field in TRAIN_FLAGS.items()}
    train = replace(TrainConfig(), conv_channels=_ints(args.conv_channels), hidden=_ints(args.hidden), **overrides)
    return harness.RunConfig(
        topology=Path(args.topology),
        snapshots=Path(args.snapshots) if args.snapshots else None,
        request=MulticastRequest.parse(int(args.source), args.dests),
        reward=RewardConfig.from_ratio(args.ratio),
        train=train,
        eval_indices=_ints(args.indices),
        out=Path(args.out),
        seed=int(args.seed),
    )


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = run_config(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(args, cfg)
    except (FileNotFoundError, IndexError, ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump), file=sys.stderr)
        return 3
    except harness.NonConverged as exc:
        print(f"NON_CONVERGED: {exc}", file=sys.stderr)
        return 4


def _dispatch(args: argparse.Namespace, cfg: harness.RunConfig) -> int:
    if args.command == "simulate":
        path, stats = harness.cmd_simulate(cfg, int(args.count))
        print(f"wrote {args.count} snapshots to {path}")
        for metric, s in stats.items():
            print(f"  {metric:6s} min {s['min']:.6g}  mean {s['mean']:.6g}  max {s['max']:.6g}")
    elif args.command == "train":
        ckpt, log_path = harness.cmd_train(cfg)
        print(f"checkpoint {ckpt}\nlog {log_path}")
    elif args.command == "evaluate":
        path, rows = harness.cmd_evaluate(cfg, args.checkpoint, aggregate=_flag(args.aggregate))
        print(f"wrote {len(rows)} rows to {path}")
    elif args.command == "install":
        entries, path = harness.cmd_install(cfg, args.checkpoint, int(args.index), int(args.group),
                                            dry_run=_flag(args.dry_run))
        where = "dry run, nothing written" if path is None else f"wrote {path}"
        print(f"{len(entries)} flow entries ({where})")
    elif args.command == "timing":
        path, rows = harness.cmd_timing(cfg, _ints(args.counts), int(args.episodes))
        for count, seconds in rows:
            print(f"  {count:3d} snapshots  {seconds:8.2f} s")
        print(f"R^2 {harness.linear_r2(*zip(*rows)):.4f}; wrote {path}")
    elif args.command == "oracle":
        path, fixtures = harness.cmd_oracle(cfg, args.objective)
        for f in fixtures:
            print(f"  snapshot {f['snapshot_index']}: {f['best_value']:.6g} edges {f['best_edges']}")
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
