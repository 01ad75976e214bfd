"""Self-contained SVG line plots and PNG image export.

Report files must be byte-deterministic, so everything here formats
numbers explicitly and avoids timestamps and external plotting tools.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evaluation import FrocCurve

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

_W, _H = 640, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 55  # margins


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(vmax: float, n: int = 6) -> list[float]:
    if vmax <= 0:
        return [0.0, 1.0]
    raw = vmax / (n - 1)
    mag = 10 ** np.floor(np.log10(raw))
    step = float(min(s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw))
    return [i * step for i in range(int(np.floor(vmax / step)) + 2)]


def svg_froc_plot(
    curves: Sequence[tuple[str, FrocCurve]],
    path: str | Path,
    title: str = "FROC",
    x_max: Optional[float] = None,
    x_label: str = "false positives per patient",
    y_label: str = "sensitivity",
) -> Path:
    """Overlay FROC curves as SVG polylines with axes and a legend."""
    if x_max is None:
        x_max = max(float(c.fp_rates.max()) for _, c in curves)
        x_max = min(max(x_max, 1.0), 20.0)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def sx(v):
        return _ML + (min(v, x_max) / x_max) * plot_w

    def sy(v):
        return _MT + (1.0 - v) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>',
    ]
    xt = [t for t in _ticks(x_max) if t <= x_max + 1e-9]
    for t in xt:
        parts.append(
            f'<line x1="{_fmt(sx(t))}" y1="{sy(0):.1f}" x2="{_fmt(sx(t))}" y2="{sy(0) + 5:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_fmt(sx(t))}" y="{sy(0) + 20:.1f}" font-family="sans-serif" font-size="11" text-anchor="middle">{t:g}</text>'
        )
    for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        parts.append(
            f'<line x1="{_ML - 5}" y1="{_fmt(sy(t))}" x2="{_ML}" y2="{_fmt(sy(t))}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 10}" y="{_fmt(sy(t) + 4)}" font-family="sans-serif" font-size="11" text-anchor="end">{t:g}</text>'
        )
        parts.append(
            f'<line x1="{_ML}" y1="{_fmt(sy(t))}" x2="{_W - _MR}" y2="{_fmt(sy(t))}" stroke="#dddddd" stroke-width="0.5"/>'
        )
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{sy(0):.1f}" stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{sy(0):.1f}" x2="{_W - _MR}" y2="{sy(0):.1f}" stroke="black"/>')
    parts.append(
        f'<text x="{_ML + plot_w / 2:.0f}" y="{_H - 12}" font-family="sans-serif" font-size="13" text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{_MT + plot_h / 2:.0f}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {_MT + plot_h / 2:.0f})">{y_label}</text>'
    )

    for i, (label, curve) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = sorted(zip(curve.fp_rates, curve.sensitivities))
        poly = " ".join(f"{_fmt(sx(f))},{_fmt(sy(s))}" for f, s in pts)
        parts.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = _MT + 16 + 16 * i
        parts.append(f'<line x1="{_W - _MR - 150}" y1="{ly}" x2="{_W - _MR - 125}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{_W - _MR - 118}" y="{ly + 4}" font-family="sans-serif" font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))


def write_png(rgb: np.ndarray, path: str | Path) -> Path:
    """Write an (H, W, 3) uint8 array as a PNG (fixed zlib level, so byte-stable)."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(h))
    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    blob = (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", header)
        + _png_chunk(b"IDAT", zlib.compress(raw, 6))
        + _png_chunk(b"IEND", b"")
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return path


def kernel_grid_image(kernels: np.ndarray, upscale: int = 8, pad: int = 1) -> np.ndarray:
    """Tile a (F, C, k, k) filter bank into one RGB image.

    Each filter is normalized to its own full range; 3-channel filters map
    to RGB, anything else renders as gray.
    """
    f, c, k, _ = kernels.shape
    cols = int(np.ceil(np.sqrt(f)))
    rows = int(np.ceil(f / cols))
    cell = k + pad
    canvas = np.full((rows * cell + pad, cols * cell + pad, 3), 40, dtype=np.uint8)
    for i in range(f):
        kern = kernels[i].astype(np.float64)
        lo, hi = kern.min(), kern.max()
        span = hi - lo if hi > lo else 1.0
        norm = (kern - lo) / span
        if c == 3:
            tile = np.moveaxis(norm, 0, -1)
        else:
            tile = np.repeat(norm.mean(axis=0)[..., None], 3, axis=-1)
        r, col = divmod(i, cols)
        y, x = pad + r * cell, pad + col * cell
        canvas[y : y + k, x : x + k] = (tile * 255).astype(np.uint8)
    return np.kron(canvas, np.ones((upscale, upscale, 1), dtype=np.uint8))
