#!/usr/bin/env python3
"""
devdiet command line - synthesize benchmarks, pretrain, probe, evaluate
and sweep visual diets
"""
import argparse
import logging
import sys
from pathlib import Path

from config.settings import load_settings
from imaging.corruptions import parse_severities, parse_types
from ops.errors import ConfigError, DevDietError
from ops.scripts.setup_logging import load_config_logging
from runner import runs

logger = logging.getLogger(__name__)


def _csv(value: str):
    return [v.strip() for v in value.split(",") if v.strip()]


def _seeds(value: str):
    """'0-4' or '0,1,2'"""
    if "-" in value and "," not in value:
        lo, hi = value.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in _csv(value)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="devdiet", description="Developmental visual diets for self-supervised learning")
    parser.add_argument("--settings", type=Path, help="Settings YAML (default: config/devdiet.yaml)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug on the console")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Render a synthetic benchmark dataset")
    p.add_argument("kind", choices=runs.SYNTH_KINDS + tuple(runs.SYNTH_ALIASES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-root", type=Path)
    p.add_argument("--force", action="store_true", help="Replace an existing dataset folder")

    p = sub.add_parser("corrupt", help="Build the corrupted test set")
    p.add_argument("--source", type=Path, help="Video dataset folder (default: <data-root>/rotation)")
    p.add_argument("--types", default="all", help="'all', a family name or a comma list")
    p.add_argument("--severities", default="1-5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--data-root", type=Path)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("pretrain", help="Pretrain one configuration")
    p.add_argument("-c", "--config", type=Path, help="Run config YAML")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--resume", type=Path, help="Continue an interrupted run directory")

    p = sub.add_parser("probe", help="Fit the linear classification probe of a run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--force", action="store_true", help="Replace an earlier probe folder")

    p = sub.add_parser("eval", help="Run the benchmark suite on a finished run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--benchmarks", default=",".join(runs.BENCHMARKS))
    p.add_argument("--data-root", type=Path)
    p.add_argument("--force", action="store_true", help="Replace an earlier eval folder")

    p = sub.add_parser("sweep", help="Pretrain and evaluate a grid of configurations")
    p.add_argument("-c", "--config", type=Path, help="Template run config YAML")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    for axis in runs.SWEEP_AXES:
        p.add_argument(f"--{axis}", type=_csv, help=f"Comma list of {axis} values")
    p.add_argument("--seeds", type=_seeds, default=[0])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--benchmarks", default=",".join(runs.BENCHMARKS))
    p.add_argument("--data-root", type=Path)

    p = sub.add_parser("report", help="Compare the reports of several runs")
    p.add_argument("run_dirs", type=Path, nargs="+")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("baseline", help="Freeze the mCE reference error table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data-root", type=Path)
    p.add_argument("--force", action="store_true")
    return parser


def dispatch(args, settings: dict) -> int:
    if args.command == "synth":
        for path in runs.synth(args.kind, settings, args.data_root, args.seed, args.force):
            print(path)
    elif args.command == "corrupt":
        manifest = runs.corrupt(
            settings,
            args.source,
            parse_types(args.types),
            parse_severities(args.severities),
            args.seed,
            args.data_root,
            args.workers,
            args.force,
        )
        print(manifest.root)
    elif args.command == "pretrain":
        config = runs.load_run_config(args.config, settings, overrides=runs.parse_overrides(args.overrides))
        manifest = runs.run_pretrain(config, settings, resume_dir=args.resume)
        print(manifest.run_dir)
    elif args.command == "probe":
        print(f"{runs.run_probe(args.run_dir, settings, args.force):.4f}")
    elif args.command == "eval":
        report = runs.run_eval(args.run_dir, _csv(args.benchmarks), settings, args.data_root, args.force)
        print(report.to_json(), end="")
    elif args.command == "sweep":
        template = runs.load_run_config(args.config, settings, overrides=runs.parse_overrides(args.overrides))
        axes = {a: getattr(args, a) for a in runs.SWEEP_AXES if getattr(args, a)}
        if not axes:
            raise ConfigError("A sweep needs at least one of --diet, --baseline, --learner, --backbone")
        result = runs.run_sweep(template, axes, args.seeds, args.workers, _csv(args.benchmarks), settings, args.data_root)
        print(result.table, end="")
        return 1 if result.failures else 0
    elif args.command == "report":
        print(runs.compare_reports(args.run_dirs, args.out), end="")
    elif args.command == "baseline":
        table = runs.run_baseline(settings, args.seed, args.epochs, args.data_root, args.force)
        print(", ".join(f"{c}={table.aggregate(c):.3f}" for c in table.types))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.settings)
    except DevDietError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    load_config_logging(settings, name=args.command, verbosity=args.verbose)

    try:
        return dispatch(args, settings)
    except DevDietError as e:
        logger.error(f"[ERROR] {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("[WARN] Interrupted")
        return 130
    except Exception:
        logger.exception("[ERROR] Unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
