#!/usr/bin/env python3
"""Run the default desk-scale experiment end to end.

Writes the report directory (FROC curves, checkpoints, kernel image,
summary JSON) and then the view-count sweep reusing the cached per-view
probabilities. Expect roughly 10-20 minutes on a laptop CPU.
"""

import argparse
import json
from pathlib import Path

from cadet.config import default_config, load_config
from cadet.pipeline import run_n_sweep, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=2)
    args = ap.parse_args()

    config = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        config = config.with_seed(args.seed)

    summary = run_pipeline(config, args.out, threads=args.threads)
    print(json.dumps(summary, indent=2, sort_keys=True))
    sweep = run_n_sweep(config, args.out, threads=args.threads)
    print(json.dumps({n: r["auc"] for n, r in sweep.items()}, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
