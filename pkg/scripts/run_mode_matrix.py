#!/usr/bin/env python3
"""Train and evaluate the 2D / 2.5D / 3D x ORIG / AUG comparison grid."""

import argparse
import json
from pathlib import Path

from cadet.config import default_config, load_config
from cadet.pipeline import run_mode_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("runs/matrix"))
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=2)
    args = ap.parse_args()

    config = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    results = run_mode_matrix(config, args.out, threads=args.threads)
    print(json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
