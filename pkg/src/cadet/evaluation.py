"""FROC / ROC evaluation, patient-level folds, and Fisher's exact test.

Sensitivity is target-level (a target counts once no matter how many
true-positive candidates hit it); false positives are candidate-level,
divided by all patients including lesion-free controls.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .candidates import NEGATIVE, POSITIVE, Candidate
from .errors import InvalidArgumentError, InvalidDatasetError
from .phantom import Target
from .seeding import rng_for


@dataclass(frozen=True)
class FrocCurve:
    """Operating points ordered by decreasing threshold.

    As the threshold falls, both the false-positive rate and the
    sensitivity are non-decreasing; this is asserted on construction.
    """

    points: tuple[tuple[float, float, float], ...]  # (threshold, fp_per_patient, sensitivity)
    n_patients: int
    n_targets: int

    def __post_init__(self):
        if not self.points:
            raise InvalidArgumentError("a FROC curve needs at least one point")
        fps = [p[1] for p in self.points]
        sens = [p[2] for p in self.points]
        ths = [p[0] for p in self.points]
        if any(t1 > t0 for t0, t1 in zip(ths, ths[1:])):
            raise InvalidArgumentError("thresholds must be non-increasing")
        if any(f < 0 for f in fps) or any(not 0 <= s <= 1 for s in sens):
            raise InvalidArgumentError("fp/patient must be >= 0 and sensitivity in [0,1]")
        if any(f1 < f0 - 1e-12 for f0, f1 in zip(fps, fps[1:])):
            raise InvalidArgumentError("fp/patient must be non-decreasing as the threshold falls")
        if any(s1 < s0 - 1e-12 for s0, s1 in zip(sens, sens[1:])):
            raise InvalidArgumentError("sensitivity must be non-decreasing as the threshold falls")

    @property
    def fp_rates(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def sensitivities(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


@dataclass(frozen=True)
class FoldAssignment:
    """Patient -> fold index map with balanced fold sizes."""

    fold_of: dict[str, int]
    k: int

    def test_patients(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.fold_of.items() if f == fold)

    def train_patients(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.fold_of.items() if f != fold)


def _candidate_score(c: Candidate, use_cg_score: bool) -> float:
    if use_cg_score:
        return c.cg_score
    if c.final_prob is None:
        raise InvalidDatasetError(f"candidate {c.id} has no final_prob; score the cohort first")
    return c.final_prob


def froc(
    cands: Sequence[Candidate],
    targets_by_patient: dict[str, Sequence[Target]],
    patient_ids: Sequence[str],
    thresholds: Optional[Sequence[float]] = None,
    use_cg_score: bool = False,
    min_target_radius_mm: Optional[float] = None,
) -> FrocCurve:
    """Sweep a score threshold into (fp/patient, sensitivity) points.

    At each threshold t: sensitivity is the fraction of targets with at
    least one matched positive candidate scoring >= t; fp/patient is the
    count of negative candidates scoring >= t over all patients. With a
    minimum target radius, smaller targets and their matched candidates
    are ignored entirely (neither hits nor false positives).
    """
    patient_ids = list(patient_ids)
    if not patient_ids:
        raise InvalidDatasetError("no patients to evaluate")

    def included(pid: str, ti: int) -> bool:
        if min_target_radius_mm is None:
            return True
        return targets_by_patient[pid][ti].radius_mm >= min_target_radius_mm

    target_count = sum(
        sum(included(p, ti) for ti in range(len(targets_by_patient.get(p, ()))))
        for p in patient_ids
    )
    if target_count == 0:
        raise InvalidDatasetError("FROC needs at least one target in the evaluated patients")

    wanted = set(patient_ids)
    best_per_target: dict[tuple[str, int], float] = {}
    neg_scores = []
    for c in cands:
        if c.patient_id not in wanted:
            continue
        score = _candidate_score(c, use_cg_score)
        if c.label == POSITIVE:
            if c.matched_target is None:
                raise InvalidDatasetError(f"positive candidate {c.id} lacks a matched target; relabel first")
            if not included(c.patient_id, c.matched_target):
                continue
            key = (c.patient_id, c.matched_target)
            best_per_target[key] = max(best_per_target.get(key, -np.inf), score)
        elif c.label == NEGATIVE:
            neg_scores.append(score)
        else:
            raise InvalidDatasetError(f"candidate {c.id} is unlabeled")

    hit_scores = np.sort(np.array(list(best_per_target.values()), dtype=np.float64))
    neg_scores = np.sort(np.array(neg_scores, dtype=np.float64))

    if thresholds is None:
        all_scores = np.concatenate([hit_scores, neg_scores])
        if all_scores.size == 0:
            raise InvalidDatasetError("no scored candidates to evaluate")
        thresholds = np.unique(all_scores)[::-1]
    else:
        thresholds = np.asarray(sorted(thresholds, reverse=True), dtype=np.float64)

    points = []
    n_pat = len(patient_ids)
    for t in thresholds:
        hits = hit_scores.size - np.searchsorted(hit_scores, t, side="left")
        fps = neg_scores.size - np.searchsorted(neg_scores, t, side="left")
        points.append((float(t), float(fps / n_pat), float(hits / target_count)))
    return FrocCurve(points=tuple(points), n_patients=n_pat, n_targets=target_count)


def sensitivity_at_fp(curve: FrocCurve, fp_rate: float) -> float:
    """Linear interpolation of sensitivity at a false-positive rate, clamped to the curve."""
    fps = curve.fp_rates
    sens = curve.sensitivities
    # collapse duplicate fp values to the best sensitivity achievable there
    best: dict[float, float] = {}
    for f, s in zip(fps, sens):
        best[f] = max(best.get(f, 0.0), s)
    xs = np.array(sorted(best))
    ys = np.array([best[x] for x in xs])
    return float(np.interp(fp_rate, xs, ys))


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Candidate-level AUC: P(score+ > score-) + 0.5 P(tie), via average ranks."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise InvalidArgumentError("labels and scores must be matching 1D sequences")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise InvalidDatasetError(f"AUC needs both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    first = np.searchsorted(sorted_s, sorted_s, side="left")
    last = np.searchsorted(sorted_s, sorted_s, side="right")
    ranks_sorted = (first + last + 1) / 2.0  # 1-based average ranks
    ranks = np.empty_like(ranks_sorted)
    ranks[order] = ranks_sorted
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def kfold_split(patient_ids: Sequence[str], k: int, seed: int) -> FoldAssignment:
    """Seeded shuffle then round-robin; fold sizes differ by at most one."""
    ids = list(patient_ids)
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("patient ids must be unique")
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise InvalidArgumentError(f"k={k} exceeds {len(ids)} patients")
    rng = rng_for(seed, "kfold")
    order = rng.permutation(len(ids))
    fold_of = {ids[int(order[j])]: j % k for j in range(len(ids))}
    return FoldAssignment(fold_of=fold_of, k=k)


# --- Fisher's exact test -----------------------------------------------------

_LOG_FACT = [0.0]


def _log_factorial(n: int) -> float:
    while len(_LOG_FACT) <= n:
        _LOG_FACT.append(_LOG_FACT[-1] + np.log(len(_LOG_FACT)))
    return _LOG_FACT[n]


def _log_comb(n: int, r: int) -> float:
    return _log_factorial(n) - _log_factorial(r) - _log_factorial(n - r)


def fisher_exact(a: int, b: int, c: int, d: int) -> float:
    """Two-sided p for the 2x2 table [[a, b], [c, d]].

    Probability-based definition: the sum of hypergeometric probabilities
    of every same-margin table whose probability does not exceed the
    observed table's (with 1e-12 absolute slack). Degenerate margins give
    p = 1 by convention.
    """
    cells = (a, b, c, d)
    if any((not isinstance(v, (int, np.integer))) or v < 0 for v in cells):
        raise InvalidArgumentError(f"table cells must be non-negative integers, got {cells}")
    r1, r2 = a + b, c + d
    c1, c2 = a + c, b + d
    if 0 in (r1, r2, c1, c2):
        return 1.0
    n = r1 + r2

    def log_p(k: int) -> float:
        return _log_comb(r1, k) + _log_comb(r2, c1 - k) - _log_comb(n, c1)

    p_obs = np.exp(log_p(a))
    total = 0.0
    for k in range(max(0, c1 - r2), min(r1, c1) + 1):
        pk = np.exp(log_p(k))
        if pk <= p_obs + 1e-12:
            total += pk
    return float(min(total, 1.0))


# --- report writers ----------------------------------------------------------


def write_froc_csv(curve: FrocCurve, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "fp_per_patient", "sensitivity"])
        for t, fp, sens in curve.points:
            writer.writerow([repr(float(t)), repr(float(fp)), repr(float(sens))])
    return path


def read_froc_csv(path: str | Path, n_patients: int = 1, n_targets: int = 1) -> FrocCurve:
    points = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            points.append((float(row["threshold"]), float(row["fp_per_patient"]), float(row["sensitivity"])))
    return FrocCurve(points=tuple(points), n_patients=n_patients, n_targets=n_targets)
