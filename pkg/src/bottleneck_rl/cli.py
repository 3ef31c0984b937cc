"""Command-line entry point.

Verbs: train, baseline, eval, compare, render. A JSON config file
(--config) provides defaults; flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig
from .runner import baseline_run, compare_run, eval_run, render_run, train_run


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--scenario", choices=["moderate", "severe"])
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bottleneck-rl")
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in ("train", "baseline", "eval"):
        _add_common(sub.add_parser(verb))
    cmp_p = sub.add_parser("compare")
    cmp_p.add_argument("--baseline-metrics", required=True, help="baseline episode_metrics.json")
    cmp_p.add_argument("--eval-metrics", required=True, help="eval episode_metrics.json")
    cmp_p.add_argument("--out", required=True)
    ren_p = sub.add_parser("render")
    ren_p.add_argument("--grid", required=True, help="grid CSV to render")
    ren_p.add_argument("--out", required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"mode": args.command}
    if args.scenario is not None:
        overrides["scenario"] = args.scenario
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.checkpoint is not None:
        overrides["checkpoint"] = args.checkpoint
    if args.out is not None:
        overrides["output_dir"] = args.out
    return cfg.replace(**overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            report = compare_run(args.baseline_metrics, args.eval_metrics, args.out)
            print(json.dumps(report, indent=2))
        elif args.command == "render":
            target = render_run(args.grid, args.out)
            print(f"wrote {target}")
        else:
            cfg = config_from_args(args)
            if args.command == "train":
                out = train_run(cfg)
                print(f"training artifacts in {out}")
            elif args.command == "baseline":
                metrics = baseline_run(cfg)
                print(f"{len(metrics)} baseline episodes; mean throughput "
                      f"{sum(m.throughput for m in metrics) / len(metrics):.1f}")
            elif args.command == "eval":
                metrics = eval_run(cfg)
                print(f"{len(metrics)} eval episodes; mean throughput "
                      f"{sum(m.throughput for m in metrics) / len(metrics):.1f}")
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
