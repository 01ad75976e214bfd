"""Fusing per-view predictions into one per-candidate probability.

The final probability is the arithmetic mean of the per-view network
probabilities. When fewer views than available are requested, a seeded
uniform subset (without replacement) is averaged instead, which is how
the view-count sweep reuses one set of predictions.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .candidates import Candidate
from .convnet import NetworkParams, predict_batch
from .errors import InvalidArgumentError, InvalidCandidateError
from .sampler import SamplerConfig, extract_views, stack_pixels
from .seeding import rng_for
from .volume import WindowedVolume


@dataclass(frozen=True)
class CandidateScore:
    """Per-candidate fusion record: the view probabilities actually used."""

    candidate_id: int
    view_probs: tuple[float, ...]
    n_used: int
    p_final: float

    def __post_init__(self):
        if not 1 <= self.n_used <= len(self.view_probs):
            raise InvalidArgumentError(f"n_used {self.n_used} out of range for {len(self.view_probs)} views")


def _subset_indices(n_total: int, n: int, seed: int, candidate_id: Optional[int]) -> np.ndarray:
    if candidate_id is None:
        rng = rng_for(seed, "subset")
    else:
        rng = rng_for(seed, "subset", candidate_id)
    return np.sort(rng.choice(n_total, size=n, replace=False))


def aggregate(
    view_probs: Sequence[float],
    n: Optional[int] = None,
    seed: int = 0,
    candidate_id: Optional[int] = None,
) -> float:
    """Mean of the view probabilities, optionally over a seeded random subset."""
    probs = np.asarray(view_probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise InvalidArgumentError("view_probs must be a non-empty 1D sequence")
    if np.any((probs < 0.0) | (probs > 1.0)) or not np.all(np.isfinite(probs)):
        raise InvalidArgumentError("view probabilities must lie in [0,1]")
    if n is not None:
        if not 1 <= n <= probs.size:
            raise InvalidArgumentError(f"subset size {n} out of range for {probs.size} views")
        if n < probs.size:
            probs = probs[_subset_indices(probs.size, n, seed, candidate_id)]
    return float(probs.mean())


def score_candidate(
    params: NetworkParams,
    vol: WindowedVolume,
    cand: Candidate,
    cfg: SamplerConfig,
    mean_image: np.ndarray,
    n: Optional[int] = None,
    seed: int = 0,
) -> CandidateScore:
    """Extract test views, predict each, and fuse; the one-candidate path."""
    views = extract_views(vol, cand, cfg)
    pixels = stack_pixels(views) - mean_image
    probs = predict_batch(params, pixels.astype(params.spec.dtype))
    n_used = len(probs) if n is None else min(n, len(probs))
    p = aggregate(probs, n=n, seed=seed, candidate_id=cand.id)
    return CandidateScore(candidate_id=cand.id, view_probs=tuple(float(v) for v in probs), n_used=n_used, p_final=p)


def _score_patient(params, vol, cands, cfg, mean_image, n, seed):
    if not cands:
        return [], {}
    pixel_blocks = []
    for cand in cands:
        try:
            views = extract_views(vol, cand, cfg)
            pixel_blocks.append(stack_pixels(views))
        except Exception as err:
            raise InvalidCandidateError(f"candidate {cand.id}: {err}") from err
    n_views = pixel_blocks[0].shape[0]
    batch = (np.concatenate(pixel_blocks) - mean_image).astype(params.spec.dtype)
    probs = predict_batch(params, batch).reshape(len(cands), n_views)
    scored = []
    view_probs = {}
    for cand, row in zip(cands, probs):
        p = aggregate(row, n=n, seed=seed, candidate_id=cand.id)
        scored.append(dataclasses.replace(cand, final_prob=p))
        view_probs[cand.id] = row.copy()
    return scored, view_probs


def score_cohort(
    params: NetworkParams,
    volumes: dict[str, WindowedVolume],
    cands: Sequence[Candidate],
    cfg: SamplerConfig,
    mean_image: np.ndarray,
    n: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
    return_view_probs: bool = False,
):
    """Score every candidate against its patient volume.

    Only ``final_prob`` changes on each candidate. Patients are processed
    independently (optionally in a thread pool) and reassembled in input
    order, so the result does not depend on scheduling.
    """
    by_patient: dict[str, list[Candidate]] = {}
    for c in cands:
        if c.patient_id not in volumes:
            raise InvalidCandidateError(f"candidate {c.id}: no volume for patient {c.patient_id!r}")
        by_patient.setdefault(c.patient_id, []).append(c)

    patients = sorted(by_patient)
    results: dict[str, tuple[list, dict]] = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                p: pool.submit(_score_patient, params, volumes[p], by_patient[p], cfg, mean_image, n, seed)
                for p in patients
            }
            for p in patients:
                results[p] = futures[p].result()
    else:
        for p in patients:
            results[p] = _score_patient(params, volumes[p], by_patient[p], cfg, mean_image, n, seed)

    scored_by_id = {}
    all_view_probs = {}
    for p in patients:
        scored, view_probs = results[p]
        for c in scored:
            scored_by_id[c.id] = c
        all_view_probs.update(view_probs)
    out = [scored_by_id[c.id] for c in cands]
    if return_view_probs:
        return out, all_view_probs
    return out
