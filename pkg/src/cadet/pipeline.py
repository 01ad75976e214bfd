"""End-to-end orchestration: phantoms -> candidates -> train -> score -> eval.

Each stage reads its inputs from the report directory and writes its own
artifacts there, so running the full pipeline is exactly the staged
commands chained: candidate CSVs, per-fold checkpoints, FROC CSVs, SVG
overlays, a first-layer kernel image, a summary JSON, and a hash
manifest. All randomness derives from the config's master seed;
re-running a config yields byte-identical files.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aggregate import aggregate, score_cohort
from .candidates import (
    Candidate,
    balance_training_views,
    generate_candidates,
    inject_targets,
    label_candidates,
    read_candidates_csv,
    write_candidates_csv,
)
from .config import ExperimentConfig, derive_seed
from .convnet import (
    NetworkSpec,
    TrainSchedule,
    first_layer_kernels,
    init_params,
    kernels_to_ascii,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .errors import InvalidArgumentError, InvalidDatasetError
from .evaluation import (
    FrocCurve,
    fisher_exact,
    froc,
    kfold_split,
    roc_auc,
    sensitivity_at_fp,
    write_froc_csv,
)
from .phantom import PhantomCase, generate_cohort, load_cohort, save_cohort
from .plots import kernel_grid_image, svg_froc_plot, write_png
from .sampler import SamplerConfig, extract_views, make_view_params
from .seeding import rng_for
from .volume import WindowedVolume, resample_isotropic, window_hu

log = logging.getLogger("cadet.pipeline")


# --- shared loading helpers ---------------------------------------------------


def windowed_volumes(config: ExperimentConfig, cases: Sequence[PhantomCase]) -> dict[str, WindowedVolume]:
    out = {}
    for case in cases:
        vol = case.volume
        if config.resample_mm is not None and tuple(vol.spacing_mm) != (config.resample_mm,) * 3:
            vol = resample_isotropic(vol, config.resample_mm)
        out[case.patient_id] = window_hu(vol, *config.window_hu)
    return out


def _load_cases(out: Path) -> list[PhantomCase]:
    cases = load_cohort(out / "phantom")
    if not cases:
        raise InvalidDatasetError(f"no phantom cohort under {out / 'phantom'}; run the phantom stage first")
    return cases


def _load_candidates(config: ExperimentConfig, out: Path, scored: bool = False) -> list[Candidate]:
    path = out / ("score/scored.csv" if scored else "candidates/candidates.csv")
    if not path.exists():
        raise InvalidDatasetError(f"missing {path}; run the earlier stages first")
    cases = _load_cases(out)
    targets_by_patient = {c.patient_id: list(c.targets) for c in cases}
    return read_candidates_csv(
        path,
        targets_by_patient=targets_by_patient,
        dist_mm=config.tier1.match_dist_mm,
        margin_mm=config.tier1.match_margin_mm,
    )


def make_splits(config: ExperimentConfig, patient_ids: Sequence[str]) -> list[tuple[list[str], list[str]]]:
    """(train, test) patient-id pairs for the configured protocol."""
    ids = sorted(patient_ids)
    ev = config.evaluation
    if ev.split == "kfold":
        assignment = kfold_split(ids, ev.k_folds, seed=derive_seed(config.seed, "folds"))
        return [(assignment.train_patients(f), assignment.test_patients(f)) for f in range(ev.k_folds)]
    rng = rng_for(derive_seed(config.seed, "holdout"), "split")
    order = rng.permutation(len(ids))
    n_test = min(max(1, round(ev.holdout_fraction * len(ids))), len(ids) - 1)
    test = sorted(ids[int(i)] for i in order[:n_test])
    train_ids = sorted(set(ids) - set(test))
    return [(train_ids, test)]


# --- training-set assembly ----------------------------------------------------


@dataclass(frozen=True)
class _ViewStub:
    """Pending (candidate, transform) pair; carries the label for balancing."""

    cand: Candidate
    vp: object

    @property
    def label(self) -> str:
        return self.cand.label


def build_training_set(
    volumes: dict[str, WindowedVolume],
    train_cands: Sequence[Candidate],
    sampler: SamplerConfig,
    balance_seed: int,
):
    """Balanced, mean-centered training arrays.

    Balancing happens on view stubs before any pixels are touched, so only
    the views that survive subsampling are ever extracted.
    """
    stubs = [_ViewStub(cand=c, vp=vp) for c in train_cands for vp in make_view_params(sampler, c.id)]
    balanced = balance_training_views(stubs, seed=balance_seed)

    x = np.empty((len(balanced), *sampler.pixel_shape()), dtype=np.float32)
    y = np.empty(len(balanced), dtype=np.intp)
    by_cand: dict[int, list[int]] = {}
    cand_of: dict[int, Candidate] = {}
    for i, stub in enumerate(balanced):
        by_cand.setdefault(stub.cand.id, []).append(i)
        cand_of[stub.cand.id] = stub.cand
        y[i] = 1 if stub.cand.label == "positive" else 0
    for cid, indices in by_cand.items():
        cand = cand_of[cid]
        views = extract_views(volumes[cand.patient_id], cand, sampler, params=[balanced[i].vp for i in indices])
        for slot, obs in zip(indices, views):
            x[slot] = obs.pixels
    mean_image = x.mean(axis=0, dtype=np.float64).astype(np.float32)
    x -= mean_image
    return x, y, mean_image


def train_split(
    config: ExperimentConfig,
    volumes: dict[str, WindowedVolume],
    train_cands: Sequence[Candidate],
    tag,
    network: Optional[NetworkSpec] = None,
    schedule: Optional[TrainSchedule] = None,
    train_sampler: Optional[SamplerConfig] = None,
):
    """Train one model for one split; ``tag`` isolates the fold's seed streams."""
    network = network or config.network
    schedule = schedule or config.schedule
    sampler = dataclasses.replace(
        train_sampler or config.train_sampler, seed=derive_seed(config.seed, "train-views")
    )
    x, y, mean_image = build_training_set(
        volumes, train_cands, sampler, balance_seed=derive_seed(config.seed, "balance", tag)
    )
    log.info("split %s: training on %d balanced views", tag, len(y))
    params0 = init_params(network, seed=derive_seed(config.seed, "init", tag))
    schedule = dataclasses.replace(schedule, seed=derive_seed(config.seed, "train", tag))
    params, trace = train(params0, x, y, schedule)
    return params, mean_image, trace


# --- artifact formats -----------------------------------------------------


def write_view_probs(view_probs: dict[int, np.ndarray], path: Path) -> Path:
    ids = sorted(view_probs)
    header = {"candidates": [{"id": cid, "count": int(view_probs[cid].size)} for cid in ids]}
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for cid in ids:
            fh.write(np.ascontiguousarray(view_probs[cid], dtype="<f8").tobytes())
    return path


def read_view_probs(path: Path) -> dict[int, np.ndarray]:
    blob = Path(path).read_bytes()
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode("utf-8"))
    out = {}
    offset = nl + 1
    for rec in header["candidates"]:
        size = rec["count"] * 8
        out[rec["id"]] = np.frombuffer(blob[offset : offset + size], dtype="<f8").copy()
        offset += size
    if offset != len(blob):
        raise InvalidArgumentError("view-probability blob has trailing or missing bytes")
    return out


def write_loss_trace(trace: Sequence[float], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,loss"] + [f"{i},{repr(float(v))}" for i, v in enumerate(trace)]
    path.write_text("\n".join(lines) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path, files: Sequence[Path]) -> Path:
    """Merge hashes of the given files into <out>/manifest.json."""
    manifest_path = Path(out_dir) / "manifest.json"
    entries = {}
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text())
    for f in files:
        entries[str(Path(f).relative_to(out_dir))] = _sha256(Path(f))
    manifest_path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return manifest_path


def check_manifest(out_dir: Path) -> list[str]:
    """Return a list of mismatch descriptions; empty means everything verifies."""
    manifest_path = Path(out_dir) / "manifest.json"
    if not manifest_path.exists():
        return [f"missing manifest: {manifest_path}"]
    entries = json.loads(manifest_path.read_text())
    problems = []
    for rel, digest in sorted(entries.items()):
        p = Path(out_dir) / rel
        if not p.exists():
            problems.append(f"missing file: {rel}")
        elif _sha256(p) != digest:
            problems.append(f"hash mismatch: {rel}")
    return problems


def _stage_files(out: Path, subdirs: Sequence[str]) -> list[Path]:
    files = []
    for sub in subdirs:
        d = out / sub
        if d.exists():
            files.extend(p for p in d.rglob("*") if p.is_file())
    return sorted(files)


# --- pipeline stages ------------------------------------------------------


def stage_phantom(config: ExperimentConfig, out_dir) -> list[PhantomCase]:
    """Generate the cohort, persist it, and reload the quantized volumes.

    Reloading means every later stage sees exactly what is on disk, whether
    it runs in-process or from a separate command.
    """
    out = Path(out_dir)
    spec = dataclasses.replace(config.phantom, seed=derive_seed(config.seed, "phantom"))
    cases = generate_cohort(spec, config.n_patients, config.control_fraction)
    save_cohort(cases, out / "phantom")
    write_manifest(out, _stage_files(out, ["phantom"]))
    return load_cohort(out / "phantom")


def stage_candidates(config: ExperimentConfig, out_dir) -> list[Candidate]:
    """Tier-1 detection, ground-truth labeling, and target injection."""
    out = Path(out_dir)
    cases = _load_cases(out)
    volumes = windowed_volumes(config, cases)
    t1 = config.tier1
    all_cands: list[Candidate] = []
    next_id = 0
    for case in cases:
        raw = generate_candidates(
            volumes[case.patient_id],
            t1.threshold,
            t1.min_voxels,
            t1.max_candidates,
            case.patient_id,
            id_start=next_id,
        )
        next_id += len(raw)
        labeled = label_candidates(raw, case.targets, dist_mm=t1.match_dist_mm, margin_mm=t1.match_margin_mm)
        injected = inject_targets(
            labeled,
            case.targets,
            case.patient_id,
            id_start=next_id,
            dist_mm=t1.match_dist_mm,
            margin_mm=t1.match_margin_mm,
        )
        next_id += len(injected) - len(labeled)
        all_cands.extend(injected)
    write_candidates_csv(all_cands, out / "candidates" / "candidates.csv")
    write_manifest(out, _stage_files(out, ["candidates"]))
    return all_cands


def tier1_stats(cands: Sequence[Candidate], cases: Sequence[PhantomCase]) -> dict:
    """Pre-injection sensitivity and FP burden of the coarse detector."""
    n_targets = sum(len(c.targets) for c in cases)
    hit = {
        (c.patient_id, c.matched_target)
        for c in cands
        if c.label == "positive" and not _is_injected(c, cases)
    }
    n_neg = sum(1 for c in cands if c.label == "negative")
    return {
        "cohort_n_targets": n_targets,
        "tier1_sensitivity_pre_injection": (len(hit) / n_targets) if n_targets else 0.0,
        "tier1_fp_per_patient": n_neg / len(cases),
        "n_injected": sum(1 for c in cands if _is_injected(c, cases)),
    }


def _is_injected(c: Candidate, cases: Sequence[PhantomCase]) -> bool:
    # injected candidates sit exactly at a target center
    if c.label != "positive" or c.matched_target is None:
        return False
    for case in cases:
        if case.patient_id == c.patient_id:
            t = case.targets[c.matched_target]
            return tuple(c.center_mm) == tuple(t.center_mm)
    return False


def stage_train(config: ExperimentConfig, out_dir) -> list[Path]:
    """Train one model per fold; checkpoints carry the fold's pixel mean."""
    out = Path(out_dir)
    cases = _load_cases(out)
    volumes = windowed_volumes(config, cases)
    cands = _load_candidates(config, out)
    by_patient: dict[str, list[Candidate]] = {}
    for c in cands:
        by_patient.setdefault(c.patient_id, []).append(c)

    written = []
    for fold, (train_ids, test_ids) in enumerate(make_splits(config, [c.patient_id for c in cases])):
        if set(train_ids) & set(test_ids):
            raise InvalidDatasetError(f"fold {fold}: train/test patients overlap")
        train_cands = [c for p in train_ids for c in by_patient.get(p, [])]
        params, mean_image, trace = train_split(config, volumes, train_cands, tag=fold)
        fold_dir = out / "train" / f"fold{fold}"
        written += list(save_checkpoint(params, fold_dir / "model", mean_image=mean_image))
        written.append(write_loss_trace(trace, fold_dir / "loss_trace.csv"))
    write_manifest(out, _stage_files(out, ["train"]))
    return written


def stage_score(config: ExperimentConfig, out_dir, threads: int = 1) -> list[Candidate]:
    """Score every fold's held-out candidates with that fold's model."""
    out = Path(out_dir)
    cases = _load_cases(out)
    volumes = windowed_volumes(config, cases)
    cands = _load_candidates(config, out)
    by_patient: dict[str, list[Candidate]] = {}
    for c in cands:
        by_patient.setdefault(c.patient_id, []).append(c)

    test_sampler = dataclasses.replace(config.test_sampler, seed=derive_seed(config.seed, "test-views"))
    scored_all: list[Candidate] = []
    view_probs_all: dict[int, np.ndarray] = {}
    for fold, (_, test_ids) in enumerate(make_splits(config, [c.patient_id for c in cases])):
        ckpt = out / "train" / f"fold{fold}" / "model"
        if not ckpt.with_suffix(".json").exists():
            raise InvalidDatasetError(f"missing checkpoint {ckpt}.json; run the train stage first")
        params, mean_image = load_checkpoint(ckpt)
        if mean_image is None:
            raise InvalidDatasetError(f"checkpoint {ckpt} lacks the training pixel mean")
        test_cands = [c for p in test_ids for c in by_patient.get(p, [])]
        scored, view_probs = score_cohort(
            params,
            volumes,
            test_cands,
            test_sampler,
            mean_image,
            seed=derive_seed(config.seed, "subset"),
            threads=threads,
            return_view_probs=True,
        )
        scored_all.extend(scored)
        view_probs_all.update(view_probs)
        log.info("fold %d: scored %d candidates", fold, len(test_cands))

    scored_all.sort(key=lambda c: c.id)
    write_candidates_csv(scored_all, out / "score" / "scored.csv")
    write_view_probs(view_probs_all, out / "score" / "view_probs.rvp")
    write_manifest(out, _stage_files(out, ["score"]))
    return scored_all


def _hits_at_fp(curve: FrocCurve, fp_rate: float) -> int:
    best_sens = 0.0
    for _, fp, sens in curve.points:
        if fp <= fp_rate + 1e-12:
            best_sens = max(best_sens, sens)
    return round(best_sens * curve.n_targets)


def evaluate_cohort(
    scored: Sequence[Candidate],
    targets_by_patient: dict,
    patient_ids: Sequence[str],
    fp_points: Sequence[float],
    min_target_radius_mm: Optional[float] = None,
) -> dict:
    """Both tiers' FROC/AUC plus Fisher's exact test at 3 FP/patient."""
    tier2 = froc(scored, targets_by_patient, patient_ids, min_target_radius_mm=min_target_radius_mm)
    tier1 = froc(
        scored, targets_by_patient, patient_ids, use_cg_score=True, min_target_radius_mm=min_target_radius_mm
    )
    labels = [1 if c.label == "positive" else 0 for c in scored]
    auc2 = roc_auc(labels, [c.final_prob for c in scored])
    auc1 = roc_auc(labels, [c.cg_score for c in scored])
    h2 = _hits_at_fp(tier2, 3.0)
    h1 = _hits_at_fp(tier1, 3.0)
    n_t = tier2.n_targets
    return {
        "auc": auc2,
        "sens_at_fp": {f"{fp:g}": sensitivity_at_fp(tier2, fp) for fp in fp_points},
        "fisher_p_at_3fp": fisher_exact(h2, n_t - h2, h1, n_t - h1),
        "tier1_auc": auc1,
        "tier1_sens_at_fp": {f"{fp:g}": sensitivity_at_fp(tier1, fp) for fp in fp_points},
        "n_targets": n_t,
        "n_patients": tier2.n_patients,
        "n_candidates": len(scored),
        "_curves": (tier1, tier2),
    }


def stage_eval(config: ExperimentConfig, out_dir) -> dict:
    """FROC curves, AUCs, Fisher test, plots, and the summary JSON.

    Evaluation pools exactly the patients that were held out in some fold
    (with k-fold CV that is the whole cohort), so control patients without
    candidates still count in the FP denominator.
    """
    out = Path(out_dir)
    cases = _load_cases(out)
    scored = _load_candidates(config, out, scored=True)
    targets_by_patient = {c.patient_id: list(c.targets) for c in cases}
    splits = make_splits(config, [c.patient_id for c in cases])
    patient_ids = sorted({p for _, test_ids in splits for p in test_ids})

    ev = evaluate_cohort(
        scored,
        targets_by_patient,
        patient_ids,
        config.evaluation.fp_points,
        config.evaluation.min_target_radius_mm,
    )
    tier1_curve, tier2_curve = ev.pop("_curves")
    write_froc_csv(tier1_curve, out / "eval" / "froc_tier1.csv")
    write_froc_csv(tier2_curve, out / "eval" / "froc_tier2.csv")
    svg_froc_plot(
        [("tier-1 (blob score)", tier1_curve), ("tier-2 (aggregated net)", tier2_curve)],
        out / "eval" / "froc.svg",
        title="Cascade FROC",
    )

    ckpt = out / "train" / "fold0" / "model"
    if ckpt.with_suffix(".json").exists():
        params0, _ = load_checkpoint(ckpt)
        write_png(kernel_grid_image(first_layer_kernels(params0)), out / "eval" / "kernels.png")
        (out / "eval" / "kernels.txt").write_text(kernels_to_ascii(params0))

    cands = _load_candidates(config, out)
    summary = {**ev, **tier1_stats(cands, cases), "n_folds": len(splits), "seed": config.seed}
    (out / "eval" / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, _stage_files(out, ["eval"]))
    return summary


def run_pipeline(config: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """The full cascade: every stage in order, one report directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    stage_phantom(config, out)
    cands = stage_candidates(config, out)
    cases = _load_cases(out)
    stats = tier1_stats(cands, cases)
    log.info(
        "tier-1: %.3f pre-injection sensitivity, %.1f FP/patient",
        stats["tier1_sensitivity_pre_injection"],
        stats["tier1_fp_per_patient"],
    )
    stage_train(config, out)
    stage_score(config, out, threads=threads)
    summary = stage_eval(config, out)
    write_manifest(out, [out / "config.json"])
    return summary


def run_n_sweep(
    config: ExperimentConfig,
    out_dir,
    n_values: Optional[Sequence[int]] = None,
    threads: int = 1,
) -> dict:
    """FROC/AUC as a function of the number of aggregated test views.

    Reuses the per-view probabilities persisted by the score stage (running
    the pipeline first if needed): each N averages a seeded random subset
    per candidate, and N = N_max reproduces the pipeline's curve exactly.
    """
    out = Path(out_dir)
    n_values = list(n_values if n_values is not None else config.n_sweep)
    n_max = config.test_sampler.n_views
    for n in n_values:
        if not 1 <= n <= n_max:
            raise InvalidArgumentError(f"sweep value {n} exceeds the {n_max} configured test views")

    if not (out / "score" / "view_probs.rvp").exists():
        run_pipeline(config, out, threads=threads)
    cases = _load_cases(out)
    targets_by_patient = {c.patient_id: list(c.targets) for c in cases}
    splits = make_splits(config, [c.patient_id for c in cases])
    patient_ids = sorted({p for _, test_ids in splits for p in test_ids})
    scored = _load_candidates(config, out, scored=True)
    view_probs = read_view_probs(out / "score" / "view_probs.rvp")

    subset_seed = derive_seed(config.seed, "subset")
    results = {}
    curves = []
    labels = [1 if c.label == "positive" else 0 for c in scored]
    for n in sorted(set(n_values)):
        rescored = [
            dataclasses.replace(
                c, final_prob=aggregate(view_probs[c.id], n=n, seed=subset_seed, candidate_id=c.id)
            )
            for c in scored
        ]
        curve = froc(
            rescored,
            targets_by_patient,
            patient_ids,
            min_target_radius_mm=config.evaluation.min_target_radius_mm,
        )
        auc = roc_auc(labels, [c.final_prob for c in rescored])
        write_froc_csv(curve, out / "sweep" / f"froc_n{n}.csv")
        results[str(n)] = {
            "auc": auc,
            "sens_at_fp": {f"{fp:g}": sensitivity_at_fp(curve, fp) for fp in config.evaluation.fp_points},
        }
        curves.append((f"N={n}", curve))

    svg_froc_plot(curves, out / "sweep" / "froc_sweep.svg", title="FROC vs number of aggregated views")
    lines = ["n,auc," + ",".join(f"sens_at_{fp:g}fp" for fp in config.evaluation.fp_points)]
    for n in sorted(set(n_values)):
        r = results[str(n)]
        lines.append(
            f"{n},{repr(r['auc'])},"
            + ",".join(repr(r["sens_at_fp"][f"{fp:g}"]) for fp in config.evaluation.fp_points)
        )
    (out / "sweep" / "sweep.csv").write_text("\n".join(lines) + "\n")
    (out / "sweep" / "summary.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    write_manifest(out, _stage_files(out, ["sweep"]))
    return results


# --- mode matrix ----------------------------------------------------------


def _matrix_cell_samplers(config: ExperimentConfig, mode: str, augmented: bool):
    mm = config.mode_matrix
    patch = mm.patch_px_3d if mode == "3D" else config.train_sampler.patch_px
    base = dataclasses.replace(
        config.train_sampler,
        mode=mode,
        patch_px=patch,
        seed=derive_seed(config.seed, "train-views"),
    )
    if not augmented:
        base = dataclasses.replace(
            base, scales_mm=(mm.orig_scale_mm,), n_translations=1, n_rotations=1, augment=False
        )
    test = dataclasses.replace(base, seed=derive_seed(config.seed, "test-views"))
    return base, test


def _matrix_cell_network(config: ExperimentConfig, mode: str) -> NetworkSpec:
    if mode == "2.5D":
        return config.network
    if mode == "2D":
        return dataclasses.replace(config.network, input_channels=1)
    if config.mode_matrix.network_3d is None:
        raise InvalidArgumentError("mode_matrix.network_3d must be set to run the 3D cells")
    return config.mode_matrix.network_3d


def run_mode_matrix(config: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Train and evaluate the {2D, 2.5D, 3D} x {ORIG, AUG} grid on one split.

    ORIG cells observe each candidate once (single scale, no translation or
    rotation); AUG cells use the configured random-view grid for both
    training and testing. Each cell reports train and test FROC.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    stage_phantom(config, out)
    cands = stage_candidates(config, out)
    cases = _load_cases(out)
    volumes = windowed_volumes(config, cases)
    targets_by_patient = {c.patient_id: list(c.targets) for c in cases}

    ids = sorted(c.patient_id for c in cases)
    order = rng_for(derive_seed(config.seed, "matrix-split"), "split").permutation(len(ids))
    n_train = min(max(1, round(config.mode_matrix.split_fraction * len(ids))), len(ids) - 1)
    train_ids = sorted(ids[int(i)] for i in order[:n_train])
    test_ids = sorted(set(ids) - set(train_ids))

    by_patient: dict[str, list[Candidate]] = {}
    for c in cands:
        by_patient.setdefault(c.patient_id, []).append(c)
    train_cands = [c for p in train_ids for c in by_patient.get(p, [])]
    test_cands = [c for p in test_ids for c in by_patient.get(p, [])]

    results = {}
    train_curves, test_curves = [], []
    for mode in config.mode_matrix.modes:
        for augmented in (False, True):
            cell = f"{mode}-{'AUG' if augmented else 'ORIG'}"
            train_sampler, test_sampler = _matrix_cell_samplers(config, mode, augmented)
            network = _matrix_cell_network(config, mode)
            params, mean_image, trace = train_split(
                config,
                volumes,
                train_cands,
                tag=cell,
                network=network,
                train_sampler=train_sampler,
            )
            cell_dir = out / "matrix" / cell
            save_checkpoint(params, cell_dir / "model", mean_image=mean_image)
            write_loss_trace(trace, cell_dir / "loss_trace.csv")

            cell_result = {}
            for split_name, split_cands, split_ids in (
                ("train", train_cands, train_ids),
                ("test", test_cands, test_ids),
            ):
                scored = score_cohort(
                    params,
                    volumes,
                    split_cands,
                    test_sampler,
                    mean_image,
                    seed=derive_seed(config.seed, "subset"),
                    threads=threads,
                )
                curve = froc(scored, targets_by_patient, split_ids)
                labels = [1 if c.label == "positive" else 0 for c in scored]
                cell_result[split_name] = {
                    "auc": roc_auc(labels, [c.final_prob for c in scored]),
                    "sens_at_3fp": sensitivity_at_fp(curve, 3.0),
                }
                write_froc_csv(curve, cell_dir / f"froc_{split_name}.csv")
                (train_curves if split_name == "train" else test_curves).append((cell, curve))
            results[cell] = cell_result
            log.info("matrix cell %s: test AUC %.3f", cell, cell_result["test"]["auc"])

    svg_froc_plot(train_curves, out / "matrix" / "froc_train.svg", title="Mode matrix, training patients")
    svg_froc_plot(test_curves, out / "matrix" / "froc_test.svg", title="Mode matrix, testing patients")
    (out / "matrix" / "summary.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    write_manifest(out, _stage_files(out, ["matrix"]))
    return results
