"""Minimal PNG writer and rasterizers for quick-look previews.

Writes 8-bit grayscale or RGB PNGs with zlib-compressed scanlines and no
ancillary chunks, so identical arrays always produce identical bytes.
The plotting helpers rasterize directly into numpy arrays; they exist
for human inspection, not for publication graphics.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _chunk(tag: bytes, body: bytes) -> bytes:
    return (struct.pack(">I", len(body)) + tag + body
            + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF))


def write_png(path, image: np.ndarray) -> None:
    """Write a (H, W) grayscale or (H, W, 3) RGB uint8 array as a PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("write_png expects uint8 data; scale first")
    if arr.ndim == 2:
        color_type = 0
        arr = arr[:, :, None]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
    else:
        raise ValueError(f"unsupported image shape {arr.shape}")
    height, width = arr.shape[:2]
    raw = b"".join(b"\x00" + arr[row].tobytes() for row in range(height))
    header = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    Path(path).write_bytes(
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", header)
        + _chunk(b"IDAT", zlib.compress(raw, 9))
        + _chunk(b"IEND", b"")
    )


def to_gray(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Linearly map values to uint8, clipping outside [lo, hi]."""
    arr = np.asarray(values, dtype=np.float64)
    lo = float(arr.min()) if lo is None else float(lo)
    hi = float(arr.max()) if hi is None else float(hi)
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8)
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def scatter_raster(x: np.ndarray, y: np.ndarray, size: int = 256,
                   x_range: tuple[float, float] = (-1.1, 1.1),
                   y_range: tuple[float, float] = (-1.1, 1.1)) -> np.ndarray:
    """Point-density raster of (x, y) samples; brighter = more points.
    Row 0 is the top of the image (largest y)."""
    xs = np.asarray(x, dtype=np.float64).ravel()
    ys = np.asarray(y, dtype=np.float64).ravel()
    cols = ((xs - x_range[0]) / (x_range[1] - x_range[0]) * (size - 1)).round().astype(int)
    rows = ((y_range[1] - ys) / (y_range[1] - y_range[0]) * (size - 1)).round().astype(int)
    keep = (cols >= 0) & (cols < size) & (rows >= 0) & (rows < size)
    counts = np.zeros((size, size))
    np.add.at(counts, (rows[keep], cols[keep]), 1.0)
    return to_gray(np.log1p(counts))


def curve_raster(xs: np.ndarray, ys: np.ndarray, width: int = 320, height: int = 200,
                 y_range: tuple[float, float] | None = None) -> np.ndarray:
    """Polyline raster of a curve, sampled densely between the points."""
    xa = np.asarray(xs, dtype=np.float64).ravel()
    ya = np.asarray(ys, dtype=np.float64).ravel()
    if xa.size < 2:
        return np.zeros((height, width), dtype=np.uint8)
    lo_y, hi_y = y_range if y_range is not None else (float(ya.min()), float(ya.max()))
    if hi_y <= lo_y:
        hi_y = lo_y + 1.0
    canvas = np.zeros((height, width), dtype=np.uint8)
    span_x = xa.max() - xa.min() or 1.0
    for i in range(xa.size - 1):
        steps = max(2, 2 * width // (xa.size - 1))
        t = np.linspace(0.0, 1.0, steps)
        px = xa[i] + t * (xa[i + 1] - xa[i])
        py = ya[i] + t * (ya[i + 1] - ya[i])
        cols = ((px - xa.min()) / span_x * (width - 1)).round().astype(int)
        rows = ((hi_y - py) / (hi_y - lo_y) * (height - 1)).round().astype(int)
        keep = (rows >= 0) & (rows < height)
        canvas[rows[keep], np.clip(cols[keep], 0, width - 1)] = 255
    return canvas
