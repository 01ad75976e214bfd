"""Random-view observation sampling around candidate locations.

Each candidate is observed N = n_scales * n_translations * n_rotations
times: the patch is translated by a random vector, rotated by a random
angle, and resampled at several physical scales into a fixed pixel grid,
so the mm-per-pixel varies with scale. Modes:

  2D    one axial plane, 1 channel; translations stay in the axial plane
        and rotations are in-plane.
  2.5D  three orthogonal planes through the (rigidly rotated) frame,
        stacked as 3 channels.
  3D    a full cube sampled in the rotated frame.

Pixel layout is planar: ``pixels[channel, row, col]`` for 2D/2.5D and
``pixels[0, depth, row, col]`` for 3D, row-major within a plane.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .candidates import Candidate
from .errors import InvalidArgumentError, InvalidCandidateError
from .seeding import rng_for
from .volume import WindowedVolume, sample_trilinear

MODE_2D = "2D"
MODE_25D = "2.5D"
MODE_3D = "3D"
MODES = (MODE_2D, MODE_25D, MODE_3D)

# channel planes as (u-axis, v-axis) pairs of the view frame
_PLANES_25D = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = MODE_25D
    scales_mm: tuple[float, ...] = (30.0, 35.0, 40.0, 45.0)
    n_translations: int = 5
    n_rotations: int = 5
    max_translation_mm: float = 3.0
    patch_px: int = 32
    augment: bool = True  # False pins translation=0, rotation=0 ("original data")
    rotation_axis: str = "random"  # "random" | "z"; 2D is always in-plane (z)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.scales_mm) < 1 or any(s <= 0 for s in self.scales_mm):
            raise InvalidArgumentError(f"scales_mm must be non-empty and positive, got {self.scales_mm}")
        if self.n_translations < 1 or self.n_rotations < 1:
            raise InvalidArgumentError("n_translations and n_rotations must be >= 1")
        if self.patch_px < 8:
            raise InvalidArgumentError(f"patch_px must be >= 8, got {self.patch_px}")
        if self.max_translation_mm < 0:
            raise InvalidArgumentError("max_translation_mm must be >= 0")
        if self.rotation_axis not in ("random", "z"):
            raise InvalidArgumentError(f"rotation_axis must be 'random' or 'z', got {self.rotation_axis!r}")

    @property
    def n_scales(self) -> int:
        return len(self.scales_mm)

    @property
    def n_views(self) -> int:
        return self.n_scales * self.n_translations * self.n_rotations

    @property
    def channels(self) -> int:
        return 3 if self.mode == MODE_25D else 1

    def pixel_shape(self) -> tuple[int, ...]:
        p = self.patch_px
        return (1, p, p, p) if self.mode == MODE_3D else (self.channels, p, p)


@dataclass(frozen=True)
class ViewParams:
    """One random observation transform."""

    scale_mm: float
    translation_mm: tuple[float, float, float]
    rotation_deg: float
    rotation_axis: int  # frame axis index the rotation is applied about


@dataclass(frozen=True)
class Observation:
    """One extracted view of one candidate."""

    candidate_id: int
    params: ViewParams
    mode: str
    pixels: np.ndarray
    label: str
    centered: bool = False

    def __post_init__(self):
        if not self.centered:
            lo, hi = float(self.pixels.min()), float(self.pixels.max())
            if lo < 0.0 or hi > 1.0:
                raise InvalidArgumentError(f"raw observation pixels must lie in [0,1], got [{lo}, {hi}]")


def _unit_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=dim)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        return np.zeros(dim)
    r = radius * rng.random() ** (1.0 / dim)
    return direction / norm * r


def make_view_params(cfg: SamplerConfig, candidate_id: int) -> list[ViewParams]:
    """The full deterministic view grid for one candidate.

    Exactly ``n_scales * n_translations * n_rotations`` entries, fully
    determined by (cfg.seed, candidate_id). For each scale, each of the
    n_translations random offsets is paired with n_rotations random angles.
    """
    rng = rng_for(cfg.seed, "views", candidate_id)
    out = []
    for scale in cfg.scales_mm:
        for _ in range(cfg.n_translations):
            if cfg.augment and cfg.max_translation_mm > 0:
                if cfg.mode == MODE_2D:
                    v2 = _unit_ball(rng, 2, cfg.max_translation_mm)
                    v = (float(v2[0]), float(v2[1]), 0.0)
                else:
                    v3 = _unit_ball(rng, 3, cfg.max_translation_mm)
                    v = (float(v3[0]), float(v3[1]), float(v3[2]))
            else:
                v = (0.0, 0.0, 0.0)
            for _ in range(cfg.n_rotations):
                if cfg.augment:
                    alpha = float(rng.uniform(0.0, 360.0))
                    if cfg.mode != MODE_2D and cfg.rotation_axis == "random":
                        axis = int(rng.integers(0, 3))
                    else:
                        axis = 2
                else:
                    alpha, axis = 0.0, 2
                out.append(
                    ViewParams(scale_mm=float(scale), translation_mm=v, rotation_deg=alpha, rotation_axis=axis)
                )
    return out


def _axis_rotation(axis: int, degrees: float) -> np.ndarray:
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    m = np.eye(3)
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    m[i, i] = c
    m[j, j] = c
    m[i, j] = -s
    m[j, i] = s
    return m


def view_world_points(center_mm, vp: ViewParams, mode: str, patch_px: int) -> np.ndarray:
    """World coordinates of every pixel of one view.

    Returns (C, p, p, 3) for 2D/2.5D and (1, p, p, p, 3) for 3D. Pixel
    centers tile the physical patch: offset ((i + 0.5)/p - 0.5) * scale.
    """
    p = patch_px
    off = ((np.arange(p) + 0.5) / p - 0.5) * vp.scale_mm
    frame = _axis_rotation(vp.rotation_axis, vp.rotation_deg)
    e = [frame[:, k] for k in range(3)]
    base = np.asarray(center_mm, dtype=np.float64) + np.asarray(vp.translation_mm)

    if mode == MODE_3D:
        pts = (
            base
            + off[None, None, :, None] * e[0]
            + off[None, :, None, None] * e[1]
            + off[:, None, None, None] * e[2]
        )
        return pts[None, ...]
    planes = _PLANES_25D if mode == MODE_25D else _PLANES_25D[:1]
    chans = []
    for ua, va in planes:
        chans.append(base + off[None, :, None] * e[ua] + off[:, None, None] * e[va])
    return np.stack(chans, axis=0)


def extract_observation(
    vol: WindowedVolume, cand: Candidate, vp: ViewParams, cfg: SamplerConfig
) -> Observation:
    """Resample one view of one candidate from the windowed volume."""
    if not vol.contains_point(cand.center_mm):
        raise InvalidCandidateError(
            f"candidate {cand.id} center {cand.center_mm} lies outside the volume"
        )
    pts = view_world_points(cand.center_mm, vp, cfg.mode, cfg.patch_px)
    pixels = sample_trilinear(vol, pts).astype(np.float32)
    return Observation(candidate_id=cand.id, params=vp, mode=cfg.mode, pixels=pixels, label=cand.label)


def extract_views(
    vol: WindowedVolume, cand: Candidate, cfg: SamplerConfig, params: Optional[Sequence[ViewParams]] = None
) -> list[Observation]:
    """All views of one candidate, extracted in a single vectorized resampling."""
    if not vol.contains_point(cand.center_mm):
        raise InvalidCandidateError(
            f"candidate {cand.id} center {cand.center_mm} lies outside the volume"
        )
    if params is None:
        params = make_view_params(cfg, cand.id)
    if not params:
        return []
    pts = np.stack([view_world_points(cand.center_mm, vp, cfg.mode, cfg.patch_px) for vp in params])
    values = sample_trilinear(vol, pts).astype(np.float32)
    return [
        Observation(candidate_id=cand.id, params=vp, mode=cfg.mode, pixels=values[i], label=cand.label)
        for i, vp in enumerate(params)
    ]


def stack_pixels(observations: Sequence[Observation]) -> np.ndarray:
    """Stack observation pixels into one (N, C, ...) batch array."""
    if not observations:
        raise InvalidArgumentError("cannot stack an empty observation list")
    return np.stack([o.pixels for o in observations])


def compute_pixel_mean(train_obs: Sequence[Observation]) -> np.ndarray:
    """Element-wise mean image over the training observations."""
    if not train_obs:
        raise InvalidArgumentError("mean image requires a non-empty training set")
    shape = train_obs[0].pixels.shape
    acc = np.zeros(shape, dtype=np.float64)
    for o in train_obs:
        if o.pixels.shape != shape:
            raise InvalidArgumentError(f"observation shape {o.pixels.shape} != {shape}")
        acc += o.pixels
    return (acc / len(train_obs)).astype(np.float32)


def apply_mean(obs: Observation, mean: np.ndarray) -> Observation:
    """Subtract the training pixel mean (also applied, unchanged, to test views)."""
    if obs.pixels.shape != mean.shape:
        raise InvalidArgumentError(f"mean shape {mean.shape} does not match pixels {obs.pixels.shape}")
    return dataclasses.replace(obs, pixels=(obs.pixels - mean).astype(np.float32), centered=True)


# --- debug dump format ------------------------------------------------------
#
# First line: JSON header with per-record metadata. Remainder: all pixel
# blocks concatenated as float32 little-endian, planar, row-major.


def write_observation_dump(observations: Sequence[Observation], path: str | Path) -> Path:
    if not observations:
        raise InvalidArgumentError("refusing to dump an empty observation list")
    first = observations[0]
    header = {
        "count": len(observations),
        "mode": first.mode,
        "shape": list(first.pixels.shape),
        "layout": "planar-row-major",
        "centered": first.centered,
        "records": [
            {
                "candidate_id": o.candidate_id,
                "label": o.label,
                "scale_mm": o.params.scale_mm,
                "translation_mm": list(o.params.translation_mm),
                "rotation_deg": o.params.rotation_deg,
                "rotation_axis": o.params.rotation_axis,
            }
            for o in observations
        ],
    }
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for o in observations:
            if o.pixels.shape != first.pixels.shape or o.centered != first.centered:
                raise InvalidArgumentError("all dumped observations must share shape and centering")
            fh.write(np.ascontiguousarray(o.pixels, dtype="<f4").tobytes())
    return path


def read_observation_dump(path: str | Path) -> list[Observation]:
    blob = Path(path).read_bytes()
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode("utf-8"))
    shape = tuple(header["shape"])
    count = header["count"]
    block = np.frombuffer(blob[nl + 1 :], dtype="<f4")
    expected = count * int(np.prod(shape))
    if block.size != expected:
        raise InvalidArgumentError(f"dump pixel block has {block.size} floats, expected {expected}")
    pixels = block.reshape((count, *shape))
    out = []
    for i, rec in enumerate(header["records"]):
        vp = ViewParams(
            scale_mm=rec["scale_mm"],
            translation_mm=tuple(rec["translation_mm"]),
            rotation_deg=rec["rotation_deg"],
            rotation_axis=rec["rotation_axis"],
        )
        out.append(
            Observation(
                candidate_id=rec["candidate_id"],
                params=vp,
                mode=header["mode"],
                pixels=pixels[i].copy(),
                label=rec["label"],
                centered=header["centered"],
            )
        )
    return out
