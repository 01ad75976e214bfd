"""Command-line entry point.

Subcommands mirror the pipeline stages (phantom, candidates, train,
score, eval), plus the full run, the view-count sweep, the 2D/2.5D/3D
mode matrix, and a manifest check. One JSON config drives everything;
--seed re-seeds the whole experiment and --out picks the report
directory. Set CADE_LOG to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, default_config, load_config, smoke_config
from .errors import CadetError, InvalidConfigError, TrainingDivergedError

log = logging.getLogger("cadet")


def _setup_logging():
    level = os.environ.get("CADE_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif getattr(args, "smoke", False):
        config = smoke_config()
    else:
        config = default_config()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", type=Path, default=None, help="experiment config JSON (defaults when omitted)")
    sub.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    sub.add_argument("--out", type=Path, default=Path("cadet-run"), help="report directory")
    sub.add_argument("--threads", type=int, default=1, help="worker threads for per-patient scoring")
    sub.add_argument("--smoke", action="store_true", help="use the built-in tiny smoke config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("phantom", "generate the synthetic cohort (RV1 volumes + target lists)"),
        ("candidates", "tier-1 blob detection, labeling, and target injection"),
        ("train", "train the per-fold second-tier networks"),
        ("score", "score held-out candidates with random-view aggregation"),
        ("eval", "FROC/AUC evaluation, plots, and the summary JSON"),
        ("run", "all stages in order"),
        ("sweep-n", "FROC for varying numbers of aggregated views"),
        ("mode-matrix", "the 2D/2.5D/3D x ORIG/AUG comparison"),
        ("check", "verify the report directory against its manifest"),
        ("init-config", "write a config JSON to stdout or --out"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep-n":
            p.add_argument("--n", type=str, default=None, help="comma-separated view counts (default: config.n_sweep)")

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
    except InvalidConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2

    out: Path = args.out
    try:
        if args.command == "phantom":
            out.mkdir(parents=True, exist_ok=True)
            config.save(out / "config.json")
            cases = pipeline.stage_phantom(config, out)
            log.info("wrote %d phantoms to %s", len(cases), out / "phantom")
        elif args.command == "candidates":
            cands = pipeline.stage_candidates(config, out)
            stats = pipeline.tier1_stats(cands, pipeline._load_cases(out))
            log.info(
                "%d candidates; tier-1 sensitivity %.3f pre-injection, %.1f FP/patient",
                len(cands),
                stats["tier1_sensitivity_pre_injection"],
                stats["tier1_fp_per_patient"],
            )
        elif args.command == "train":
            pipeline.stage_train(config, out)
        elif args.command == "score":
            scored = pipeline.stage_score(config, out, threads=args.threads)
            log.info("scored %d candidates", len(scored))
        elif args.command == "eval":
            summary = pipeline.stage_eval(config, out)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "run":
            summary = pipeline.run_pipeline(config, out, threads=args.threads)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "sweep-n":
            n_values = None
            if args.n:
                n_values = [int(v) for v in args.n.split(",") if v]
            results = pipeline.run_n_sweep(config, out, n_values=n_values, threads=args.threads)
            print(json.dumps(results, indent=2, sort_keys=True))
        elif args.command == "mode-matrix":
            results = pipeline.run_mode_matrix(config, out, threads=args.threads)
            print(json.dumps(results, indent=2, sort_keys=True))
        elif args.command == "check":
            problems = pipeline.check_manifest(out)
            if problems:
                for p in problems:
                    print(p, file=sys.stderr)
                return 1
            print(f"manifest ok: {out}")
        elif args.command == "init-config":
            out.mkdir(parents=True, exist_ok=True)
            path = config.save(out / "config.json")
            print(f"wrote {path}")
    except InvalidConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3
    except CadetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
