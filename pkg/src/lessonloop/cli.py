"""Command-line entry point: run, replay, report, and ablate subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .runner import ablate_run, effective_config, execute_run, replay_run, report_run

logger = logging.getLogger(__name__)

RUN_ROOT_ENV = "LESSONL_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"


def _out_root(args: argparse.Namespace) -> Path:
    if getattr(args, "out_root", None):
        return Path(args.out_root)
    return Path(os.environ.get(RUN_ROOT_ENV, DEFAULT_RUN_ROOT))


def _load_config_file(path: str | None) -> tuple[dict, Path | None]:
    if path is None:
        return {}, None
    config_path = Path(path)
    return json.loads(config_path.read_text()), config_path.parent


def _config_from_args(args: argparse.Namespace) -> tuple[dict, Path | None]:
    file_config, config_dir = _load_config_file(args.config)
    selection = {"k": args.k, "threshold": args.threshold, "epsilon": args.epsilon}
    overrides = {
        "rounds": args.rounds,
        "mode": args.mode,
        "ablation": args.ablation,
        "seed": args.seed,
        "repeats": args.repeats,
        "selection": selection,
    }
    return effective_config(file_config, overrides), config_dir


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--problems", required=True, help="problem-set directory")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--rounds", type=int, default=None)
    parser.add_argument("--k", type=int, default=None, help="lessons per round")
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--mode", choices=["optimize", "generate"], default=None)
    parser.add_argument(
        "--ablation",
        choices=[
            "full",
            "speedup_only",
            "relevance_only",
            "no_adjustment",
            "random_k",
            "no_lessons",
        ],
        default=None,
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--repeats", type=int, default=None)
    parser.add_argument("--out-root", help=f"output root (default ${RUN_ROOT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lessonloop",
        description="Lesson-banking multi-agent code optimization runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run the loop over a problem set")
    _add_run_flags(run_parser)

    replay_parser = sub.add_parser("replay", help="re-execute a captured run")
    replay_parser.add_argument("run_dir")
    replay_parser.add_argument("--problems", required=True)

    report_parser = sub.add_parser("report", help="(re)emit summary documents")
    report_parser.add_argument("run_dir")
    report_parser.add_argument(
        "--format", action="append", dest="formats", help="json and/or csv"
    )

    ablate_parser = sub.add_parser("ablate", help="run a sweep over ablation variants")
    _add_run_flags(ablate_parser)
    ablate_parser.add_argument(
        "--variants", nargs="*", help="subset of variants (default: all)"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            config, config_dir = _config_from_args(args)
            outcome = execute_run(config, args.problems, _out_root(args), config_dir)
        elif args.command == "replay":
            outcome = replay_run(args.run_dir, args.problems)
        elif args.command == "report":
            formats = tuple(args.formats) if args.formats else ("json", "csv")
            for fmt in formats:
                if fmt not in ("json", "csv"):
                    parser.error(f"unknown report format {fmt!r}")
            outcome = report_run(args.run_dir, formats)
        elif args.command == "ablate":
            config, config_dir = _config_from_args(args)
            outcome = ablate_run(
                config, args.problems, _out_root(args), args.variants, config_dir
            )
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for message in outcome.messages:
        print(message)
    if outcome.run_dir is not None:
        print(f"artifacts: {outcome.run_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
