"""Synthetic patient volumes with ground-truth lesion lists.

Each phantom is Gaussian background noise plus bright raised-cosine
ellipsoids: "lesions" (the targets, roughly spherical) and "distractors"
(elongated, rendered the same way at overlapping contrast, absent from
the target list). Distractors exist so the first detection tier cannot
be perfect on intensity alone; telling the two apart requires shape,
which is the second tier's job.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, InvalidArgumentError
from .seeding import rng_for
from .volume import Volume, read_rv1, write_rv1

_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class PhantomSpec:
    """Generation parameters for one synthetic cohort."""

    dims: tuple[int, int, int] = (64, 64, 64)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background_hu: float = 0.0
    background_noise_hu: float = 20.0
    lesion_count_range: tuple[int, int] = (0, 6)
    lesion_radius_mm_range: tuple[float, float] = (2.5, 8.0)
    lesion_contrast_hu_range: tuple[float, float] = (100.0, 220.0)
    lesion_axis_ratio_min: float = 0.8
    distractor_count_range: tuple[int, int] = (18, 36)
    distractor_radius_mm_range: tuple[float, float] = (1.5, 3.0)
    distractor_contrast_hu_range: tuple[float, float] = (80.0, 160.0)
    distractor_elongation_range: tuple[float, float] = (2.5, 4.0)
    seed: int = 0

    def __post_init__(self):
        for name in (
            "lesion_count_range",
            "lesion_radius_mm_range",
            "lesion_contrast_hu_range",
            "distractor_count_range",
            "distractor_radius_mm_range",
            "distractor_contrast_hu_range",
            "distractor_elongation_range",
        ):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise InvalidArgumentError(f"{name} must satisfy 0 <= min <= max, got {lo, hi}")
        if min(self.dims) < 1 or min(self.spacing_mm) <= 0:
            raise InvalidArgumentError(f"bad geometry dims={self.dims} spacing={self.spacing_mm}")
        if self.background_noise_hu < 0:
            raise InvalidArgumentError("background_noise_hu must be >= 0")
        if not 0 < self.lesion_axis_ratio_min <= 1:
            raise InvalidArgumentError("lesion_axis_ratio_min must be in (0, 1]")
        half_extent = min((n - 1) * s for n, s in zip(self.dims, self.spacing_mm)) / 2
        if self.lesion_radius_mm_range[1] > half_extent:
            raise InvalidArgumentError(
                f"max lesion radius {self.lesion_radius_mm_range[1]} mm cannot fit in volume (half extent {half_extent} mm)"
            )


@dataclass(frozen=True)
class Target:
    """Ground-truth lesion: bounding-sphere center/radius plus peak contrast."""

    center_mm: tuple[float, float, float]
    radius_mm: float
    contrast_hu: float
    patient_id: str


@dataclass(frozen=True)
class PhantomCase:
    patient_id: str
    volume: Volume
    targets: tuple[Target, ...]


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _render_ellipsoid(voxels, spacing, center, semi_axes, rotation, contrast):
    """Add a raised-cosine ellipsoid: peak ``contrast`` at the center, 0 at the surface."""
    bound = float(np.max(semi_axes))
    lo = np.maximum(np.floor((center - bound) / spacing).astype(int), 0)
    hi = np.minimum(np.ceil((center + bound) / spacing).astype(int) + 1, voxels.shape)
    if np.any(lo >= hi):
        return
    axes = [np.arange(lo[a], hi[a]) * spacing[a] - center[a] for a in range(3)]
    dx, dy, dz = np.meshgrid(*axes, indexing="ij")
    rel = np.stack([dx, dy, dz], axis=-1) @ rotation  # rotate into ellipsoid frame
    u = np.sqrt(np.sum((rel / semi_axes) ** 2, axis=-1))
    profile = np.where(u < 1.0, 0.5 * (1.0 + np.cos(np.pi * np.minimum(u, 1.0))), 0.0)
    voxels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += (contrast * profile).astype(voxels.dtype)


def _place(rng, bound_radius, extent, others, min_gap):
    """Rejection-sample a center keeping the bounding sphere inside the volume.

    ``others`` is a list of (center, exclusion_radius); the new center must be
    at least ``exclusion_radius + min_gap`` away from each.
    """
    lo = np.full(3, bound_radius)
    hi = extent - bound_radius
    if np.any(hi < lo):
        raise GenerationError(f"object of radius {bound_radius} mm cannot fit inside extent {extent}")
    for _ in range(_PLACEMENT_ATTEMPTS):
        center = rng.uniform(lo, hi)
        ok = all(np.linalg.norm(center - c) >= r + min_gap for c, r in others)
        if ok:
            return center
    raise GenerationError(f"no admissible placement after {_PLACEMENT_ATTEMPTS} attempts")


def generate_phantom(spec: PhantomSpec, patient_id: str) -> tuple[Volume, list[Target]]:
    """Deterministically synthesize one patient volume and its target list."""
    rng = rng_for(spec.seed, "phantom", patient_id)
    extent = (np.asarray(spec.dims) - 1) * np.asarray(spec.spacing_mm)
    spacing = np.asarray(spec.spacing_mm)

    voxels = (spec.background_hu + rng.normal(0.0, spec.background_noise_hu, size=spec.dims)).astype(np.float32)

    n_lesions = int(rng.integers(spec.lesion_count_range[0], spec.lesion_count_range[1] + 1))
    n_distractors = int(rng.integers(spec.distractor_count_range[0], spec.distractor_count_range[1] + 1))

    targets: list[Target] = []
    placed: list[tuple[np.ndarray, float]] = []  # (center, exclusion radius for later objects)

    for _ in range(n_lesions):
        radius = float(rng.uniform(*spec.lesion_radius_mm_range))
        contrast = float(rng.uniform(*spec.lesion_contrast_hu_range))
        ratios = rng.uniform(spec.lesion_axis_ratio_min, 1.0, size=3)
        rotation = _random_rotation(rng)
        center = _place(rng, radius, extent, placed, min_gap=radius + 2.0)
        semi = radius * ratios
        _render_ellipsoid(voxels, spacing, center, semi, rotation, contrast)
        targets.append(
            Target(
                center_mm=tuple(float(c) for c in center),
                radius_mm=float(np.max(semi)),
                contrast_hu=contrast,
                patient_id=patient_id,
            )
        )
        # keep distractors out of the labeling radius (target radius + 5 mm)
        placed.append((center, float(np.max(semi)) + 8.0))

    for _ in range(n_distractors):
        radius = float(rng.uniform(*spec.distractor_radius_mm_range))
        contrast = float(rng.uniform(*spec.distractor_contrast_hu_range))
        elong = float(rng.uniform(*spec.distractor_elongation_range))
        rotation = _random_rotation(rng)
        semi = np.array([elong * radius, 0.9 * radius, 0.9 * radius])
        bound = float(np.max(semi))
        center = _place(rng, bound, extent, placed, min_gap=2.0)
        _render_ellipsoid(voxels, spacing, center, semi, rotation, contrast)
        placed.append((center, 1.0))

    vol = Volume(voxels=voxels, spacing_mm=spec.spacing_mm, origin_mm=(0.0, 0.0, 0.0))
    return vol, targets


def generate_cohort(spec: PhantomSpec, n_patients: int, control_fraction: float = 0.0) -> list[PhantomCase]:
    """Independent phantoms with per-patient sub-seeds.

    The trailing ``round(control_fraction * n_patients)`` patients are
    lesion-free controls.
    """
    if n_patients < 1:
        raise InvalidArgumentError(f"n_patients must be >= 1, got {n_patients}")
    if not 0.0 <= control_fraction <= 1.0:
        raise InvalidArgumentError(f"control_fraction must be in [0,1], got {control_fraction}")
    n_controls = round(control_fraction * n_patients)
    control_spec = dataclasses.replace(spec, lesion_count_range=(0, 0))
    cases = []
    for i in range(n_patients):
        patient_id = f"p{i:03d}"
        case_spec = control_spec if i >= n_patients - n_controls else spec
        vol, targets = generate_phantom(case_spec, patient_id)
        cases.append(PhantomCase(patient_id=patient_id, volume=vol, targets=tuple(targets)))
    return cases


# --- on-disk cohort layout ------------------------------------------------
#
# <dir>/<patient>.json + <dir>/<patient>.raw        RV1 volume
# <dir>/<patient>_targets.json                      [{center_mm, radius_mm, contrast_hu}]


def write_targets(targets, path: str | Path) -> Path:
    payload = [
        {"center_mm": list(t.center_mm), "radius_mm": t.radius_mm, "contrast_hu": t.contrast_hu}
        for t in targets
    ]
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True) + "\n")
    return path


def read_targets(path: str | Path, patient_id: str) -> tuple[Target, ...]:
    payload = json.loads(Path(path).read_text())
    return tuple(
        Target(
            center_mm=tuple(float(c) for c in t["center_mm"]),
            radius_mm=float(t["radius_mm"]),
            contrast_hu=float(t["contrast_hu"]),
            patient_id=patient_id,
        )
        for t in payload
    )


def save_cohort(cases, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for case in cases:
        j, r = write_rv1(case.volume, out / case.patient_id)
        t = write_targets(case.targets, out / f"{case.patient_id}_targets.json")
        written += [j, r, t]
    return written


def load_cohort(in_dir: str | Path) -> list[PhantomCase]:
    in_dir = Path(in_dir)
    cases = []
    for tpath in sorted(in_dir.glob("*_targets.json")):
        patient_id = tpath.name.removesuffix("_targets.json")
        vol = read_rv1(in_dir / patient_id)
        cases.append(PhantomCase(patient_id=patient_id, volume=vol, targets=read_targets(tpath, patient_id)))
    return cases
