"""Tier-1 candidate generation, labeling, injection, and class balancing.

The coarse detector thresholds a windowed volume and emits one candidate
per 26-connected component, scored by the component's mean intensity.
It is tuned for high sensitivity at a high false-positive rate; the
second tier exists to prune those false positives.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, InvalidDatasetError
from .phantom import Target
from .seeding import rng_for
from .volume import WindowedVolume

if TYPE_CHECKING:  # pragma: no cover
    from .sampler import Observation

log = logging.getLogger("cadet.candidates")

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"

DEFAULT_MATCH_MARGIN_MM = 5.0


@dataclass(frozen=True)
class Candidate:
    """One tier-1 detection in world space.

    ``cg_score`` is the unbounded tier-1 confidence; ``final_prob`` is the
    tier-2 aggregated probability, present only after scoring.
    """

    id: int
    patient_id: str
    center_mm: tuple[float, float, float]
    cg_score: float
    label: str = UNLABELED
    matched_target: Optional[int] = None
    final_prob: Optional[float] = None

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE, UNLABELED):
            raise InvalidArgumentError(f"bad label {self.label!r}")
        if self.matched_target is not None and self.label != POSITIVE:
            raise InvalidArgumentError("matched_target implies a positive label")
        if self.final_prob is not None and not 0.0 <= self.final_prob <= 1.0:
            raise InvalidArgumentError(f"final_prob must be in [0,1], got {self.final_prob}")


def generate_candidates(
    vol: WindowedVolume,
    threshold: float,
    min_voxels: int,
    max_candidates: int,
    patient_id: str,
    id_start: int = 0,
) -> list[Candidate]:
    """Blob detection: threshold, 26-connected components, centroid per blob.

    Components with fewer than ``min_voxels`` voxels are dropped; survivors
    are scored by mean intensity, sorted by score descending, and truncated
    to ``max_candidates``.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must be in (0,1), got {threshold}")
    mask = vol.voxels > threshold
    labels, n = ndimage.label(mask, structure=np.ones((3, 3, 3), dtype=bool))
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel())[1:]
    keep = np.flatnonzero(sizes >= min_voxels) + 1
    if keep.size == 0:
        return []
    means = ndimage.mean(vol.voxels, labels=labels, index=keep)
    centroids = ndimage.center_of_mass(vol.voxels * mask, labels=labels, index=keep)

    order = sorted(range(len(keep)), key=lambda i: (-float(means[i]), int(keep[i])))
    order = order[:max_candidates]
    spacing = np.asarray(vol.spacing_mm)
    origin = np.asarray(vol.origin_mm)
    out = []
    for rank, i in enumerate(order):
        center = origin + np.asarray(centroids[i]) * spacing
        out.append(
            Candidate(
                id=id_start + rank,
                patient_id=patient_id,
                center_mm=tuple(float(c) for c in center),
                cg_score=float(means[i]),
            )
        )
    return out


def _match_radii(targets: Sequence[Target], dist_mm: Optional[float], margin_mm: float) -> np.ndarray:
    if dist_mm is not None:
        if dist_mm <= 0:
            raise InvalidArgumentError(f"dist_mm must be > 0, got {dist_mm}")
        return np.full(len(targets), float(dist_mm))
    return np.array([t.radius_mm + margin_mm for t in targets])


def label_candidates(
    cands: Sequence[Candidate],
    targets: Sequence[Target],
    dist_mm: Optional[float] = None,
    margin_mm: float = DEFAULT_MATCH_MARGIN_MM,
) -> list[Candidate]:
    """Label each candidate positive (matched to its nearest target) or negative.

    A candidate is positive when it lies within the match radius of some
    target: a fixed ``dist_mm`` when given, otherwise per-target
    ``radius + margin``. Nearest target wins; exact ties go to the lowest
    target index. Several candidates may match one target.
    """
    if not targets:
        return [dataclasses.replace(c, label=NEGATIVE, matched_target=None) for c in cands]
    radii = _match_radii(targets, dist_mm, margin_mm)
    centers = np.array([t.center_mm for t in targets])
    out = []
    for cand in cands:
        d = np.linalg.norm(centers - np.asarray(cand.center_mm), axis=1)
        eligible = np.flatnonzero(d <= radii)
        if eligible.size:
            best = int(eligible[np.lexsort((eligible, d[eligible]))[0]])
            out.append(dataclasses.replace(cand, label=POSITIVE, matched_target=best))
        else:
            out.append(dataclasses.replace(cand, label=NEGATIVE, matched_target=None))
    return out


def inject_targets(
    cands: Sequence[Candidate],
    targets: Sequence[Target],
    patient_id: str,
    id_start: int,
    dist_mm: Optional[float] = None,
    margin_mm: float = DEFAULT_MATCH_MARGIN_MM,
) -> list[Candidate]:
    """Append a synthetic positive at each target no positive candidate covers.

    Injected candidates sit exactly at the target center and carry the
    maximum existing score so any tier-1 score cut keeps them; afterwards
    tier-1 sensitivity is exactly 1.
    """
    out = list(cands)
    if not targets:
        return out
    radii = _match_radii(targets, dist_mm, margin_mm)
    positives = [c for c in cands if c.label == POSITIVE]
    max_score = max((c.cg_score for c in cands), default=1.0)
    next_id = id_start
    for ti, target in enumerate(targets):
        covered = any(
            np.linalg.norm(np.asarray(c.center_mm) - np.asarray(target.center_mm)) <= radii[ti]
            for c in positives
        )
        if not covered:
            out.append(
                Candidate(
                    id=next_id,
                    patient_id=patient_id,
                    center_mm=target.center_mm,
                    cg_score=max_score,
                    label=POSITIVE,
                    matched_target=ti,
                )
            )
            next_id += 1
    return out


def balance_training_views(views: Sequence["Observation"], seed: int) -> list["Observation"]:
    """Keep all positives, subsample negatives to parity, seeded shuffle.

    If negatives are scarcer than positives everything is kept (with a
    warning). A wholly absent class is unusable for training.
    """
    pos = [v for v in views if v.label == POSITIVE]
    neg = [v for v in views if v.label == NEGATIVE]
    if not pos or not neg:
        raise InvalidDatasetError(
            f"both classes required for balancing, got {len(pos)} positive / {len(neg)} negative"
        )
    rng = rng_for(seed, "balance")
    if len(neg) > len(pos):
        chosen = rng.choice(len(neg), size=len(pos), replace=False)
        neg = [neg[i] for i in sorted(chosen)]
    else:
        if len(neg) < len(pos):
            log.warning("fewer negatives (%d) than positives (%d); keeping all", len(neg), len(pos))
    combined = pos + neg
    perm = rng.permutation(len(combined))
    return [combined[i] for i in perm]


# --- CSV exchange format ---------------------------------------------------

CSV_HEADER = ["patient_id", "candidate_id", "x_mm", "y_mm", "z_mm", "cg_score", "label", "final_prob"]


def write_candidates_csv(cands: Sequence[Candidate], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for c in cands:
            writer.writerow(
                [
                    c.patient_id,
                    c.id,
                    repr(float(c.center_mm[0])),
                    repr(float(c.center_mm[1])),
                    repr(float(c.center_mm[2])),
                    repr(float(c.cg_score)),
                    c.label,
                    "" if c.final_prob is None else repr(float(c.final_prob)),
                ]
            )
    return path


def read_candidates_csv(
    path: str | Path,
    targets_by_patient: Optional[dict[str, Sequence[Target]]] = None,
    dist_mm: Optional[float] = None,
    margin_mm: float = DEFAULT_MATCH_MARGIN_MM,
) -> list[Candidate]:
    """Read candidates back; target matching is re-derived when targets are given.

    The CSV carries the label but not the matched-target index, so without
    targets positive rows come back with ``matched_target=None``.
    """
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                Candidate(
                    id=int(row["candidate_id"]),
                    patient_id=row["patient_id"],
                    center_mm=(float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])),
                    cg_score=float(row["cg_score"]),
                    label=UNLABELED if row["label"] == UNLABELED else row["label"],
                    matched_target=None,
                    final_prob=float(row["final_prob"]) if row["final_prob"] else None,
                )
            )
    if targets_by_patient is None:
        return rows
    out = []
    for c in rows:
        targets = targets_by_patient.get(c.patient_id, ())
        relabeled = label_candidates([c], targets, dist_mm=dist_mm, margin_mm=margin_mm)[0]
        out.append(dataclasses.replace(relabeled, final_prob=c.final_prob))
    return out
