"""Command-line entry point.

Commands:
  train                continual run: split, train per task, evaluate, emit artifacts
  baseline             sgd / joint / er reference runs on the same stream
  ablate               width x depth grid or alpha sweep, consolidated CSV
  report               summarize a run directory; plot-data CSVs + figures

`SPARC_THREADS` caps how many ablation grid points run in parallel.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from .config import parse_config
from .errors import ConfigError, SparcError, ValidationError
from .reporting import (
    render_report,
    run_ablate_command,
    run_baseline_command,
    run_train_command,
)

_OVERRIDE_FLAGS = (
    ("--width-factor", "width_factor"),
    ("--depth", "depth"),
    ("--filters-per-task", "filters_per_task"),
    ("--alpha", "alpha"),
    ("--kappa", "kappa"),
    ("--learning-rate", "learning_rate"),
    ("--batch-size", "batch_size"),
    ("--epochs", "epochs"),
    ("--num-tasks", "num_tasks"),
    ("--seed", "seed"),
    ("--buffer-size", "buffer_size"),
    ("--projection-skips", "projection_skips"),
)


def _add_common(parser: argparse.ArgumentParser, default_out: str) -> None:
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--data", help="dataset directory (train.spds + test.spds)")
    parser.add_argument("--synthetic", help="synthetic dataset spec, e.g. classes=10,n=250,size=16")
    parser.add_argument("--out", default=default_out, help="output directory")
    for flag, _key in _OVERRIDE_FLAGS:
        parser.add_argument(flag, help=argparse.SUPPRESS)


def _build_config(args: argparse.Namespace):
    overrides = {}
    for _flag, key in _OVERRIDE_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.data is not None:
        overrides["data"] = args.data
    if args.synthetic is not None:
        overrides["synthetic"] = args.synthetic
    return parse_config(args.config, overrides)


def _parse_list(raw: Optional[str], kind):
    if raw is None:
        return None
    try:
        return [kind(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparc", description="continual-learning experiments with isolated sub-networks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the continual learner")
    _add_common(p_train, "sparc-train")

    p_base = sub.add_parser("baseline", help="run a reference method")
    p_base.add_argument("--kind", required=True, choices=("sgd", "joint", "er"))
    _add_common(p_base, "sparc-baseline")

    p_ablate = sub.add_parser("ablate", help="run a config grid")
    p_ablate.add_argument("--widths", help="comma-separated width factors")
    p_ablate.add_argument("--depths", help="comma-separated depths")
    p_ablate.add_argument("--alphas", help="comma-separated consolidation rates")
    _add_common(p_ablate, "sparc-ablate")

    p_report = sub.add_parser("report", help="summarize a finished run")
    p_report.add_argument("run_dir")
    p_report.add_argument("--out", default=None, help="where to write report files")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            config = _build_config(args)
            run_train_command(config, args.out)
            print(f"run artifacts written to {args.out}")
        elif args.command == "baseline":
            config = _build_config(args)
            run_baseline_command(args.kind, config, args.out)
            print(f"baseline artifacts written to {args.out}")
        elif args.command == "ablate":
            config = _build_config(args)
            workers = max(1, int(os.environ.get("SPARC_THREADS", "1")))
            rows = run_ablate_command(
                config,
                args.out,
                widths=_parse_list(args.widths, float),
                depths=_parse_list(args.depths, int),
                alphas=_parse_list(args.alphas, float),
                max_workers=workers,
            )
            print(f"{len(rows)} grid points written to {args.out}")
        elif args.command == "report":
            print(render_report(args.run_dir, args.out), end="")
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SparcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
