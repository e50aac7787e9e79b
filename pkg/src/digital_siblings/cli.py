"""Command line entry point: ``digsib <stage> --config experiment.ini``.

Exit codes: 0 success, 2 configuration error, 3 execution error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from ._jit import backend_name
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DigsibError
from .pipeline import Pipeline, replay

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXEC = 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="experiment config (INI)")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--out", help="output directory (default: from config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for episode execution")
    p.add_argument("--stage-cache", choices=("on", "off"), default="on",
                   help="reuse artifacts of completed stages (default on)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="digsib", description="Multi-simulator test generation for lane keeping.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("search", "MapElites search on every sibling"),
        ("migrate", "migrate tests across siblings and build union maps"),
        ("merge", "merge the union maps"),
        ("evaluate", "execute all tests on the twin and score the maps"),
        ("report", "render heatmaps and tables"),
        ("pipeline", "run every stage"),
    ):
        _common(sub.add_parser(name, help=help_))
    rp = sub.add_parser("replay", help="re-execute one stored test")
    _common(rp)
    rp.add_argument("--test-id", required=True)
    rp.add_argument("--simulator", help="simulator of the stored execution (default: first match)")
    rp.add_argument("--trace", help="write the per-step trace CSV here")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    # for replay the seed is an episode-level override, not part of the run identity
    if args.seed is not None and args.command != "replay":
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed: must be non-negative")
    if args.jobs < 1:
        raise ConfigError("--jobs: must be >= 1")
    return cfg


def _run(args) -> int:
    cfg = _load(args)
    pipe = Pipeline(cfg, args.out, jobs=args.jobs, stage_cache=args.stage_cache == "on")
    logging.getLogger(__name__).info("backend %s, run dir %s", backend_name(), pipe.run_dir)
    if args.command == "replay":
        res = replay(pipe.run_dir, args.test_id, args.simulator, seed=args.seed, out_csv=args.trace)
        res.pop("result")
        print(json.dumps(res, sort_keys=True, indent=1))
        if not res["match"]:
            print(f"replay of {args.test_id} does not match the stored record", file=sys.stderr)
            return EXIT_EXEC
        return EXIT_OK
    if args.command == "pipeline":
        pipe.run()
    else:
        pipe.run_until(args.command)
    print(pipe.run_dir)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DigsibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXEC


if __name__ == "__main__":
    sys.exit(main())
