"""Experiment configuration: one versioned JSON document drives a run.

The document stores a single master seed; every stage derives its own
sub-stream from it at run time, so overriding the seed on the command
line re-seeds the whole experiment coherently.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .convnet import ConvLayerSpec, LocalLayerSpec, NetworkSpec, TrainSchedule
from .errors import CadetError, InvalidConfigError
from .phantom import PhantomSpec
from .sampler import SamplerConfig
from .seeding import seed_sequence

CONFIG_VERSION = 1


def derive_seed(master: int, *tags) -> int:
    """Stable 63-bit sub-seed for a named stream of the experiment."""
    return int(seed_sequence(master, *tags).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class Tier1Config:
    threshold: float = 0.55
    min_voxels: int = 5
    max_candidates: int = 80
    match_dist_mm: Optional[float] = None  # None: per-target radius + margin
    match_margin_mm: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidConfigError("tier1.threshold", f"must be in (0,1), got {self.threshold}")
        if self.min_voxels < 1 or self.max_candidates < 1:
            raise InvalidConfigError("tier1", "min_voxels and max_candidates must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    split: str = "kfold"  # "kfold" | "holdout"
    k_folds: int = 5
    holdout_fraction: float = 0.25
    fp_points: tuple[float, ...] = (1.0, 3.0, 6.0)
    min_target_radius_mm: Optional[float] = None  # evaluate only targets at least this large

    def __post_init__(self):
        if self.split not in ("kfold", "holdout"):
            raise InvalidConfigError("evaluation.split", f"must be 'kfold' or 'holdout', got {self.split!r}")
        if self.split == "kfold" and self.k_folds < 2:
            raise InvalidConfigError("evaluation.k_folds", f"must be >= 2, got {self.k_folds}")
        if self.split == "holdout" and not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidConfigError("evaluation.holdout_fraction", "must be in (0,1)")
        if not self.fp_points:
            raise InvalidConfigError("evaluation.fp_points", "must be non-empty")


@dataclass(frozen=True)
class MatrixConfig:
    modes: tuple[str, ...] = ("2D", "2.5D", "3D")
    split_fraction: float = 0.8
    orig_scale_mm: float = 40.0
    patch_px_3d: int = 16
    network_3d: Optional[NetworkSpec] = None

    def __post_init__(self):
        for m in self.modes:
            if m not in ("2D", "2.5D", "3D"):
                raise InvalidConfigError("mode_matrix.modes", f"unknown mode {m!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidConfigError("mode_matrix.split_fraction", "must be in (0,1)")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20260810
    n_patients: int = 40
    control_fraction: float = 0.25
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    window_hu: tuple[float, float] = (-100.0, 200.0)
    resample_mm: Optional[float] = 1.0
    tier1: Tier1Config = field(default_factory=Tier1Config)
    train_sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_translations=2, n_rotations=2))
    test_sampler: SamplerConfig = field(default_factory=SamplerConfig)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    n_sweep: tuple[int, ...] = (1, 2, 5, 10, 25, 50, 100)
    mode_matrix: MatrixConfig = field(default_factory=MatrixConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise InvalidConfigError("seed", "must be non-negative")
        if self.n_patients < 1:
            raise InvalidConfigError("n_patients", "must be >= 1")
        if not 0.0 <= self.control_fraction <= 1.0:
            raise InvalidConfigError("control_fraction", "must be in [0,1]")
        if self.window_hu[0] >= self.window_hu[1]:
            raise InvalidConfigError("window_hu", f"low must be < high, got {self.window_hu}")
        if self.resample_mm is not None and self.resample_mm <= 0:
            raise InvalidConfigError("resample_mm", "must be > 0 when set")
        if self.network.input_spatial != self._expected_input_spatial(self.train_sampler):
            raise InvalidConfigError(
                "network.input_spatial",
                f"{self.network.input_spatial} does not match sampler patches {self._expected_input_spatial(self.train_sampler)}",
            )
        if self.network.input_channels != self.train_sampler.channels:
            raise InvalidConfigError(
                "network.input_channels",
                f"{self.network.input_channels} does not match sampler mode {self.train_sampler.mode}",
            )
        if self.test_sampler.mode != self.train_sampler.mode or self.test_sampler.patch_px != self.train_sampler.patch_px:
            raise InvalidConfigError("test_sampler", "mode and patch_px must match train_sampler")
        if any(n < 1 for n in self.n_sweep):
            raise InvalidConfigError("n_sweep", "all view counts must be >= 1")

    @staticmethod
    def _expected_input_spatial(sampler: SamplerConfig) -> tuple[int, ...]:
        p = sampler.patch_px
        return (p, p, p) if sampler.mode == "3D" else (p, p)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    # -- JSON round trip -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "n_patients": self.n_patients,
            "control_fraction": self.control_fraction,
            "phantom": {
                "dims": list(self.phantom.dims),
                "spacing_mm": list(self.phantom.spacing_mm),
                "background_hu": self.phantom.background_hu,
                "background_noise_hu": self.phantom.background_noise_hu,
                "lesion_count_range": list(self.phantom.lesion_count_range),
                "lesion_radius_mm_range": list(self.phantom.lesion_radius_mm_range),
                "lesion_contrast_hu_range": list(self.phantom.lesion_contrast_hu_range),
                "lesion_axis_ratio_min": self.phantom.lesion_axis_ratio_min,
                "distractor_count_range": list(self.phantom.distractor_count_range),
                "distractor_radius_mm_range": list(self.phantom.distractor_radius_mm_range),
                "distractor_contrast_hu_range": list(self.phantom.distractor_contrast_hu_range),
                "distractor_elongation_range": list(self.phantom.distractor_elongation_range),
            },
            "window_hu": list(self.window_hu),
            "resample_mm": self.resample_mm,
            "tier1": {
                "threshold": self.tier1.threshold,
                "min_voxels": self.tier1.min_voxels,
                "max_candidates": self.tier1.max_candidates,
                "match_dist_mm": self.tier1.match_dist_mm,
                "match_margin_mm": self.tier1.match_margin_mm,
            },
            "train_sampler": self._sampler_dict(self.train_sampler),
            "test_sampler": self._sampler_dict(self.test_sampler),
            "network": self.network.to_dict(),
            "schedule": self.schedule.to_dict(),
            "evaluation": {
                "split": self.evaluation.split,
                "k_folds": self.evaluation.k_folds,
                "holdout_fraction": self.evaluation.holdout_fraction,
                "fp_points": list(self.evaluation.fp_points),
                "min_target_radius_mm": self.evaluation.min_target_radius_mm,
            },
            "n_sweep": list(self.n_sweep),
            "mode_matrix": {
                "modes": list(self.mode_matrix.modes),
                "split_fraction": self.mode_matrix.split_fraction,
                "orig_scale_mm": self.mode_matrix.orig_scale_mm,
                "patch_px_3d": self.mode_matrix.patch_px_3d,
                "network_3d": self.mode_matrix.network_3d.to_dict() if self.mode_matrix.network_3d else None,
            },
        }

    @staticmethod
    def _sampler_dict(s: SamplerConfig) -> dict:
        return {
            "mode": s.mode,
            "scales_mm": list(s.scales_mm),
            "n_translations": s.n_translations,
            "n_rotations": s.n_rotations,
            "max_translation_mm": s.max_translation_mm,
            "patch_px": s.patch_px,
            "augment": s.augment,
            "rotation_axis": s.rotation_axis,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise InvalidConfigError("version", f"unsupported config version {version}")

        def build(path, fn, payload):
            try:
                return fn(**payload)
            except InvalidConfigError:
                raise
            except (CadetError, TypeError, ValueError, KeyError) as err:
                raise InvalidConfigError(path, str(err)) from err

        def tup(path, payload, key, cast=tuple):
            try:
                return cast(payload[key]) if payload.get(key) is not None else None
            except (TypeError, ValueError) as err:
                raise InvalidConfigError(f"{path}.{key}", str(err)) from err

        ph = doc.get("phantom", {})
        phantom = build(
            "phantom",
            PhantomSpec,
            {
                "dims": tuple(ph.get("dims", (64, 64, 64))),
                "spacing_mm": tuple(ph.get("spacing_mm", (1.0, 1.0, 1.0))),
                "background_hu": ph.get("background_hu", 0.0),
                "background_noise_hu": ph.get("background_noise_hu", 20.0),
                "lesion_count_range": tuple(ph.get("lesion_count_range", (0, 6))),
                "lesion_radius_mm_range": tuple(ph.get("lesion_radius_mm_range", (2.5, 8.0))),
                "lesion_contrast_hu_range": tuple(ph.get("lesion_contrast_hu_range", (100.0, 220.0))),
                "lesion_axis_ratio_min": ph.get("lesion_axis_ratio_min", 0.8),
                "distractor_count_range": tuple(ph.get("distractor_count_range", (18, 36))),
                "distractor_radius_mm_range": tuple(ph.get("distractor_radius_mm_range", (1.5, 3.0))),
                "distractor_contrast_hu_range": tuple(ph.get("distractor_contrast_hu_range", (80.0, 160.0))),
                "distractor_elongation_range": tuple(ph.get("distractor_elongation_range", (2.5, 4.0))),
            },
        )

        def sampler(path):
            s = doc.get(path, {})
            return build(
                path,
                SamplerConfig,
                {
                    "mode": s.get("mode", "2.5D"),
                    "scales_mm": tuple(s.get("scales_mm", (30.0, 35.0, 40.0, 45.0))),
                    "n_translations": s.get("n_translations", 5),
                    "n_rotations": s.get("n_rotations", 5),
                    "max_translation_mm": s.get("max_translation_mm", 3.0),
                    "patch_px": s.get("patch_px", 32),
                    "augment": s.get("augment", True),
                    "rotation_axis": s.get("rotation_axis", "random"),
                },
            )

        t1 = doc.get("tier1", {})
        ev = doc.get("evaluation", {})
        mm = doc.get("mode_matrix", {})
        try:
            network = NetworkSpec.from_dict(doc["network"]) if "network" in doc else NetworkSpec()
        except (CadetError, TypeError, ValueError, KeyError) as err:
            raise InvalidConfigError("network", str(err)) from err
        try:
            schedule = TrainSchedule.from_dict(doc["schedule"]) if "schedule" in doc else TrainSchedule()
        except (CadetError, TypeError, ValueError, KeyError) as err:
            raise InvalidConfigError("schedule", str(err)) from err
        network_3d = None
        if mm.get("network_3d"):
            try:
                network_3d = NetworkSpec.from_dict(mm["network_3d"])
            except (CadetError, TypeError, ValueError, KeyError) as err:
                raise InvalidConfigError("mode_matrix.network_3d", str(err)) from err

        return build(
            "",
            ExperimentConfig,
            {
                "seed": doc.get("seed", 0),
                "n_patients": doc.get("n_patients", 40),
                "control_fraction": doc.get("control_fraction", 0.25),
                "phantom": phantom,
                "window_hu": tup("", doc, "window_hu") or (-100.0, 200.0),
                "resample_mm": doc.get("resample_mm", 1.0),
                "tier1": build(
                    "tier1",
                    Tier1Config,
                    {
                        "threshold": t1.get("threshold", 0.55),
                        "min_voxels": t1.get("min_voxels", 5),
                        "max_candidates": t1.get("max_candidates", 80),
                        "match_dist_mm": t1.get("match_dist_mm"),
                        "match_margin_mm": t1.get("match_margin_mm", 5.0),
                    },
                ),
                "train_sampler": sampler("train_sampler"),
                "test_sampler": sampler("test_sampler"),
                "network": network,
                "schedule": schedule,
                "evaluation": build(
                    "evaluation",
                    EvalConfig,
                    {
                        "split": ev.get("split", "kfold"),
                        "k_folds": ev.get("k_folds", 5),
                        "holdout_fraction": ev.get("holdout_fraction", 0.25),
                        "fp_points": tuple(ev.get("fp_points", (1.0, 3.0, 6.0))),
                        "min_target_radius_mm": ev.get("min_target_radius_mm"),
                    },
                ),
                "n_sweep": tuple(doc.get("n_sweep", (1, 2, 5, 10, 25, 50, 100))),
                "mode_matrix": build(
                    "mode_matrix",
                    MatrixConfig,
                    {
                        "modes": tuple(mm.get("modes", ("2D", "2.5D", "3D"))),
                        "split_fraction": mm.get("split_fraction", 0.8),
                        "orig_scale_mm": mm.get("orig_scale_mm", 40.0),
                        "patch_px_3d": mm.get("patch_px_3d", 16),
                        "network_3d": network_3d,
                    },
                ),
            },
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise InvalidConfigError("<document>", f"not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise InvalidConfigError("<document>", "top level must be a JSON object")
    return ExperimentConfig.from_dict(doc)


def default_config() -> ExperimentConfig:
    """Desk-scale default: 40 phantom patients, 2.5D views, 5-fold CV.

    The learning rate and init scale are hotter than the full-scale
    recipe; at this network size the canonical values stall near chance
    and leave every probability at 0.5.
    """
    return ExperimentConfig(
        network=NetworkSpec(
            input_spatial=(32, 32),
            input_channels=3,
            conv=(ConvLayerSpec(8, 5, 2, 2), ConvLayerSpec(16, 3, 1, 0)),
            pool=(3, 2),
            locally_connected=(LocalLayerSpec(8, 2),),
            fully_connected=(32,),
            dropconnect_rate=0.25,
            sigma_init=0.1,
            dtype="float32",
        ),
        schedule=TrainSchedule(learning_rate=0.01),
        mode_matrix=MatrixConfig(
            network_3d=NetworkSpec(
                input_spatial=(16, 16, 16),
                input_channels=1,
                conv=(ConvLayerSpec(8, 5, 2, 2), ConvLayerSpec(16, 3, 2, 1)),
                pool=None,
                locally_connected=(LocalLayerSpec(8, 3),),
                fully_connected=(32,),
                dropconnect_rate=0.25,
                sigma_init=0.1,
                dtype="float32",
            )
        ),
    )


def smoke_config() -> ExperimentConfig:
    """Four tiny patients, a holdout split, and a 20-epoch schedule; runs in seconds."""
    sampler = SamplerConfig(
        mode="2.5D", scales_mm=(24.0, 32.0), n_translations=1, n_rotations=2, patch_px=16
    )
    return ExperimentConfig(
        seed=7,
        n_patients=4,
        control_fraction=0.0,
        phantom=PhantomSpec(
            dims=(48, 48, 48),
            lesion_count_range=(1, 3),
            lesion_radius_mm_range=(3.0, 6.0),
            distractor_count_range=(6, 12),
            distractor_radius_mm_range=(1.5, 2.5),
            distractor_elongation_range=(2.5, 3.5),
        ),
        tier1=Tier1Config(threshold=0.55, min_voxels=5, max_candidates=40),
        train_sampler=sampler,
        test_sampler=dataclasses.replace(sampler, n_translations=2, n_rotations=2),
        network=NetworkSpec(
            input_spatial=(16, 16),
            input_channels=3,
            conv=(ConvLayerSpec(4, 3, 1, 0),),
            pool=(3, 2),
            locally_connected=(),
            fully_connected=(8,),
            dropconnect_rate=0.25,
            sigma_init=0.1,
            dtype="float32",
        ),
        schedule=TrainSchedule(phases=((20, 8),), learning_rate=0.01),
        evaluation=EvalConfig(split="holdout", holdout_fraction=0.25, fp_points=(1.0, 3.0, 6.0)),
        n_sweep=(1, 2, 4),
        mode_matrix=MatrixConfig(
            modes=("2D", "2.5D"),
            split_fraction=0.75,
            orig_scale_mm=32.0,
            patch_px_3d=8,
        ),
    )
