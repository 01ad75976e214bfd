"""Volumetric image substrate.

A volume is a dense 3D scalar grid in Hounsfield units with physical
spacing and a world-space origin. World and voxel coordinates are
related affinely: ``world = origin + index * spacing`` (index 0 maps to
the center of voxel 0). Arrays are indexed ``voxels[ix, iy, iz]``; the
serialized layout is x-fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class Volume:
    """3D scalar grid in HU with physical geometry.

    Attributes:
        voxels: array of shape (nx, ny, nz), scalar intensities in HU.
        spacing_mm: per-axis voxel size in mm, all > 0.
        origin_mm: world position of the center of voxel (0, 0, 0).
    """

    voxels: np.ndarray
    spacing_mm: Vec3
    origin_mm: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise InvalidArgumentError(f"voxels must be 3D, got shape {self.voxels.shape}")
        if min(self.voxels.shape) < 1:
            raise InvalidArgumentError(f"all dims must be >= 1, got {self.voxels.shape}")
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise InvalidArgumentError(f"spacing must be 3 positive values, got {self.spacing_mm}")
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def extent_mm(self) -> np.ndarray:
        """Physical size: one voxel-size slab per voxel."""
        return np.asarray(self.dims) * np.asarray(self.spacing_mm)

    def index_to_world(self, index) -> np.ndarray:
        return np.asarray(self.origin_mm) + np.asarray(index, dtype=np.float64) * np.asarray(self.spacing_mm)

    def world_to_index(self, point_mm) -> np.ndarray:
        return (np.asarray(point_mm, dtype=np.float64) - np.asarray(self.origin_mm)) / np.asarray(self.spacing_mm)

    def contains_point(self, point_mm) -> bool:
        """True if the point lies within the voxel-center hull."""
        idx = self.world_to_index(point_mm)
        return bool(np.all(idx >= 0.0) and np.all(idx <= np.asarray(self.dims) - 1))


@dataclass(frozen=True)
class WindowedVolume(Volume):
    """Volume mapped through an HU window; every voxel lies in [0, 1]."""

    window_hu: tuple[float, float] = field(default=(0.0, 1.0))

    def __post_init__(self):
        super().__post_init__()
        vmin, vmax = float(self.voxels.min()), float(self.voxels.max())
        if vmin < 0.0 or vmax > 1.0:
            raise InvalidArgumentError(f"windowed voxels must lie in [0,1], got [{vmin}, {vmax}]")


def window_hu(vol: Volume, lo: float, hi: float) -> WindowedVolume:
    """Map HU linearly so [lo, hi] becomes [0, 1], clamping outside values."""
    if not lo < hi:
        raise InvalidArgumentError(f"window requires lo < hi, got [{lo}, {hi}]")
    scaled = np.clip((vol.voxels.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return WindowedVolume(
        voxels=scaled.astype(np.float32),
        spacing_mm=vol.spacing_mm,
        origin_mm=vol.origin_mm,
        window_hu=(float(lo), float(hi)),
    )


def resample_isotropic(vol: Volume, target_spacing_mm: float) -> Volume:
    """Resample onto an isotropic grid via trilinear interpolation.

    Output dims preserve the physical extent to within one voxel:
    ``n_out = round(n_in * s_in / t)``. The origin is unchanged, so the
    output grid shares voxel-center (0,0,0) with the input. Samples past
    the last input center use edge clamping; resampling at the input's
    own spacing is therefore an exact identity.
    """
    t = float(target_spacing_mm)
    if not t > 0:
        raise InvalidArgumentError(f"target spacing must be > 0, got {target_spacing_mm}")
    src = vol.voxels
    dims_out = tuple(max(1, round(n * s / t)) for n, s in zip(vol.dims, vol.spacing_mm))

    # Per-axis source coordinates and clamped bracketing indices. Trilinear
    # interpolation on an axis-aligned grid factors into per-axis weights.
    lo_idx, hi_idx, w_hi = [], [], []
    for axis, (n_out, n_in, s_in) in enumerate(zip(dims_out, vol.dims, vol.spacing_mm)):
        coord = np.arange(n_out, dtype=np.float64) * (t / s_in)
        coord = np.clip(coord, 0.0, n_in - 1)
        i0 = np.floor(coord).astype(np.intp)
        i0 = np.minimum(i0, n_in - 2) if n_in > 1 else np.zeros_like(i0)
        lo_idx.append(i0)
        hi_idx.append(np.minimum(i0 + 1, n_in - 1))
        w_hi.append(coord - i0)

    out = np.zeros(dims_out, dtype=np.float64)
    for cx in (0, 1):
        wx = (w_hi[0] if cx else 1.0 - w_hi[0])[:, None, None]
        ix = hi_idx[0] if cx else lo_idx[0]
        for cy in (0, 1):
            wy = (w_hi[1] if cy else 1.0 - w_hi[1])[None, :, None]
            iy = hi_idx[1] if cy else lo_idx[1]
            for cz in (0, 1):
                wz = (w_hi[2] if cz else 1.0 - w_hi[2])[None, None, :]
                iz = hi_idx[2] if cz else lo_idx[2]
                out += wx * wy * wz * src[np.ix_(ix, iy, iz)].astype(np.float64)

    result = out.astype(src.dtype) if np.issubdtype(src.dtype, np.floating) else out
    return Volume(voxels=result, spacing_mm=(t, t, t), origin_mm=vol.origin_mm)


def sample_trilinear(vol: WindowedVolume, points_mm) -> np.ndarray | float:
    """Trilinear world-space sampling with a 0.0 fill outside the grid.

    Accepts a single point (3,) or an array (..., 3) and returns matching
    scalars. The field is continuous everywhere: voxels conceptually
    beyond the grid hold 0 (window-low, i.e. background), so values decay
    linearly to zero across the one-voxel border instead of jumping.
    """
    pts = np.asarray(points_mm, dtype=np.float64)
    if pts.shape[-1:] != (3,):
        raise InvalidArgumentError(f"points must have a trailing dimension of 3, got {pts.shape}")
    single = pts.ndim == 1
    lead_shape = pts.shape[:-1]
    pts = pts.reshape(-1, 3)

    dims = np.asarray(vol.dims)
    idx = (pts - np.asarray(vol.origin_mm)) / np.asarray(vol.spacing_mm)
    # Far-away points are all-zero regardless; clamp keeps the arithmetic tame.
    idx = np.clip(idx, -1.5, dims + 0.5)
    i0 = np.floor(idx).astype(np.intp)
    frac = idx - i0

    vox = vol.voxels
    acc = np.zeros(pts.shape[0], dtype=np.float64)
    for corner in range(8):
        offs = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        ci = i0 + offs
        valid = np.all((ci >= 0) & (ci < dims), axis=1)
        w = np.prod(np.where(offs == 1, frac, 1.0 - frac), axis=1)
        cc = np.clip(ci, 0, dims - 1)
        vals = vox[cc[:, 0], cc[:, 1], cc[:, 2]].astype(np.float64)
        acc += w * np.where(valid, vals, 0.0)

    return float(acc[0]) if single else acc.reshape(lead_shape)


# --- RV1 on-disk format -------------------------------------------------
#
# <base>.json   sidecar: {"dims", "spacing_mm", "origin_mm", "dtype": "i16"}
# <base>.raw    little-endian int16, x-fastest ordering


def write_rv1(vol: Volume, base_path: str | Path) -> tuple[Path, Path]:
    """Write a volume as an RV1 pair, rounding intensities to int16 HU."""
    base = Path(base_path)
    sidecar = {
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing_mm),
        "origin_mm": list(vol.origin_mm),
        "dtype": "i16",
    }
    json_path = base.with_suffix(".json")
    raw_path = base.with_suffix(".raw")
    json_path.write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    quantized = np.clip(np.rint(vol.voxels), -32768, 32767).astype("<i2")
    raw_path.write_bytes(quantized.ravel(order="F").tobytes())
    return json_path, raw_path


def read_rv1(base_path: str | Path) -> Volume:
    """Read an RV1 pair; validates the raw byte length against the sidecar."""
    base = Path(base_path)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("dtype") != "i16":
        raise InvalidArgumentError(f"unsupported RV1 dtype {sidecar.get('dtype')!r}")
    nx, ny, nz = (int(d) for d in sidecar["dims"])
    raw = base.with_suffix(".raw").read_bytes()
    expected = 2 * nx * ny * nz
    if len(raw) != expected:
        raise InvalidArgumentError(
            f"RV1 raw size mismatch: expected {expected} bytes for dims {(nx, ny, nz)}, got {len(raw)}"
        )
    voxels = np.frombuffer(raw, dtype="<i2").reshape((nx, ny, nz), order="F").astype(np.float32)
    return Volume(
        voxels=voxels,
        spacing_mm=tuple(float(s) for s in sidecar["spacing_mm"]),
        origin_mm=tuple(float(o) for o in sidecar["origin_mm"]),
    )
