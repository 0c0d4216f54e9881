"""Command-line entry point.

Exit codes: 0 success, 1 validation/config error, 2 data error, 3 internal error.
"""

import argparse
import logging
import sys

from .exceptions import ConfigError, LHRMError
from .pipeline.config import RunConfig
from .pipeline.runner import STAGES, RunDir, run_end_to_end, run_stage

logger = logging.getLogger("lhrm")

MODEL_CHOICES = ("lhrm", "hot", "maxcov")


def _build_parser():
    parser = argparse.ArgumentParser(prog="lhrm", description="Cold-start travel recommendation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run-all",):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="run directory (overrides the config)")
        p.add_argument("--model", choices=MODEL_CHOICES, action="append",
                       help="restrict recommend/eval to a model; repeatable")
        p.add_argument("--k", help="comma-separated cutoffs, e.g. 30,50,100,200")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.k is not None:
        overrides["eval_k"] = args.k
    if args.config:
        return RunConfig.load(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        if args.command == "run-all":
            run_end_to_end(cfg, args.model)
        else:
            if args.command == "gen-data":
                RunDir(cfg.out).root.mkdir(parents=True, exist_ok=True)
                cfg.save(RunDir(cfg.out).config)
            run_stage(args.command, cfg, args.model)
        if args.command in ("eval", "run-all"):
            sys.stdout.write(RunDir(cfg.out).report.read_text(encoding="utf-8"))
    except LHRMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
