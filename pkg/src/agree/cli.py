"""Command-line entry point: ``agree eval | build-emerging | show-trajectory | score``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .builder import BuildError
from .harness import (
    ConfigError,
    RunConfig,
    build_emerging,
    builder_config_from_file,
    run_eval,
    score_predictions,
    show_trajectory,
)
from .metrics import InclusionRule


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.concurrency:
        cfg.concurrency = args.concurrency
    if args.offline:
        cfg.offline = True
    report = run_eval(cfg, out_dir=args.out)
    print(report.to_text(), end="")
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    cfg, cache_dir = builder_config_from_file(args.config)
    try:
        manifest = build_emerging(cfg, args.out, args.cache_dir or cache_dir)
    except BuildError as exc:
        print(f"build failed: {exc}", file=sys.stderr)
        if exc.progress_path:
            print(f"progress written to {exc.progress_path}; re-run the same command to resume", file=sys.stderr)
        return 1
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _cmd_show(args: argparse.Namespace) -> int:
    try:
        print(show_trajectory(args.run, args.case), end="")
    except LookupError as exc:
        print(exc, file=sys.stderr)
        return 1
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    ns = [int(x) for x in args.n.split(",")]
    report = score_predictions(args.predictions, args.train, ns, InclusionRule(args.ra_rule))
    print(report.to_json() if args.json else report.to_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agree", description="Agentic knowledge-graph completion toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="run the agent over a test set and score it")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="run directory (default: [run] out_dir)")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--offline", action="store_true", help="fail on any cache miss instead of calling out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("build-emerging", help="build an emerging-entities benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("show-trajectory", help="print one case's agent trajectory")
    p.add_argument("--run", required=True)
    p.add_argument("--case", required=True)
    p.set_defaults(func=_cmd_show)

    p = sub.add_parser("score", help="score precomputed predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--n", default="1,3,5,10")
    p.add_argument("--ra-rule", default=InclusionRule.CARDINALITY_FITS.value, choices=[r.value for r in InclusionRule])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
