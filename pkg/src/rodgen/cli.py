"""Command-line entry point: ``rodgen <subcommand> [flags]``.

Errors are printed to stderr as one JSON object and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .config import ConfigError, validate_config
from .fixtures import write_demo_corpus
from .gateway import GatewayError
from .pipeline import STAGES, Pipeline, StageError

SUBCOMMANDS = {
    "ingest": ("ingest",),
    "generate": ("global", "local"),
    "filter": ("filter",),
    "multiobj": ("multiobj",),
    "postprocess": ("postprocess",),
    "stats": ("stats",),
    "run-all": STAGES,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--mock", action="store_true", default=None, help="use in-process mock services")
    common.add_argument("--seed", type=int, dest="rng_seed")
    common.add_argument("--concurrency", type=int)
    common.add_argument("--alpha1", type=float)
    common.add_argument("--eps", type=float, dest="dbscan_eps")
    common.add_argument("--min-pts", type=int, dest="dbscan_min_pts")
    common.add_argument("--temperature", type=float)
    common.add_argument("--resume", action="store_true", help="skip images already checkpointed")
    common.add_argument("--out-dir", default="out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rodgen", description="Referring-instruction data generation engine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    demo = sub.add_parser("demo-corpus", help="write the 3-image synthetic corpus")
    demo.add_argument("dir")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("mock", "rng_seed", "concurrency", "alpha1", "dbscan_eps", "dbscan_min_pts", "temperature")
    return {k: getattr(args, k) for k in keys if getattr(args, k) is not None}


def _fail(kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return 2 if kind == "config" else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "demo-corpus":
        paths = write_demo_corpus(args.dir)
        print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
        return 0
    try:
        cfg = validate_config(args.config, **_overrides(args))
        report = Pipeline(cfg, args.out_dir).run(SUBCOMMANDS[args.command], resume=args.resume)
    except ConfigError as exc:
        return _fail("config", str(exc), violations=exc.violations)
    except StageError as exc:
        return _fail("stage", str(exc), stage=exc.stage)
    except GatewayError as exc:
        return _fail("gateway", str(exc), attempts=exc.attempts)
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc))
    summary = {stage: {k: rep.get(k) for k in ("in", "out", "dropped", "wall_s")}
               for stage, rep in report["stages"].items()}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
