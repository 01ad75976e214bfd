#!/usr/bin/env python3
"""Sweep tier-1 thresholds on the default cohort.

Prints pre-injection sensitivity and FP/patient per threshold; used to
pick the default operating point (high sensitivity, tolerable FP load).
"""

import argparse
import dataclasses

from cadet.candidates import generate_candidates, inject_targets, label_candidates
from cadet.config import default_config, derive_seed
from cadet.phantom import generate_cohort
from cadet.pipeline import tier1_stats, windowed_volumes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--thresholds", type=str, default="0.45,0.5,0.55,0.6,0.65")
    args = ap.parse_args()

    config = default_config()
    spec = dataclasses.replace(config.phantom, seed=derive_seed(config.seed, "phantom"))
    cases = generate_cohort(spec, config.n_patients, config.control_fraction)
    volumes = windowed_volumes(config, cases)

    print("threshold  sensitivity  fp/patient  candidates")
    for threshold in (float(t) for t in args.thresholds.split(",")):
        cands, next_id = [], 0
        for case in cases:
            raw = generate_candidates(
                volumes[case.patient_id],
                threshold,
                config.tier1.min_voxels,
                config.tier1.max_candidates,
                case.patient_id,
                id_start=next_id,
            )
            next_id += len(raw)
            labeled = label_candidates(raw, case.targets, margin_mm=config.tier1.match_margin_mm)
            injected = inject_targets(labeled, case.targets, case.patient_id, id_start=next_id)
            next_id += len(injected) - len(labeled)
            cands.extend(injected)
        s = tier1_stats(cands, cases)
        print(
            f"{threshold:9.2f}  {s['tier1_sensitivity_pre_injection']:11.3f}"
            f"  {s['tier1_fp_per_patient']:10.1f}  {len(cands):10d}"
        )


if __name__ == "__main__":
    main()
