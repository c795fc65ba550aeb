"""Hyperspectral cube containers and bit-exact file I/O.

A cube on disk is a pair of files sharing one stem: ``<name>.json`` holds the
metadata (dims, axis order, dtype tag, optional wavenumber grid and pixel
size, fast-scan axis, CRC32 checksum) and ``<name>.raw`` holds the payload as
little-endian float32 in C order over (x, y, w) with the spectral index
fastest.  Loading verifies sizes, the checksum, and finiteness, so a
save/load round trip is element-exact.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AXES = ("x", "y", "w")

_AXIS_ALIASES = {
    "x": "x",
    "y": "y",
    "w": "w",
    "omega": "w",
    "ω": "w",
    "lambda": "w",
}

_FORMAT_NAME = "spend-cube"
_FORMAT_VERSION = 1


class CubeFormatError(ValueError):
    """Raised when a cube file is missing, malformed, or inconsistent."""


def canonical_axis(axis: str) -> str:
    """Normalize an axis label to one of 'x', 'y', 'w'."""
    try:
        return _AXIS_ALIASES[str(axis).lower()]
    except KeyError:
        raise ValueError(f"unknown axis {axis!r}; expected one of x, y, w") from None


def axis_index(axis: str) -> int:
    """Array dimension of an axis label for (x, y, w)-ordered data."""
    return AXES.index(canonical_axis(axis))


@dataclass(frozen=True, eq=False)
class Image:
    """A single 2-D frame of float32 values with optional pixel size in nm."""

    data: np.ndarray
    pixel_size: float | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"image data must be 2-D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("image contains non-finite values")
        if self.pixel_size is not None and not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
            and self.pixel_size == other.pixel_size
        )


@dataclass(frozen=True, eq=False)
class HyperCube:
    """A 3-D hyperspectral stack: two spatial axes (x, y) plus a spectral axis w.

    ``data`` is float32 with shape (n_x, n_y, n_w).  ``axis_order`` is a
    provenance tag recording the acquisition ordering (a permutation of
    "xyw"); the in-memory layout is always (x, y, w).  ``wavenumbers``, when
    present, is a strictly monotone grid of length n_w in cm^-1.
    ``fast_axis`` names the axis scanned fastest ("x" by default; "w" for
    spectral-sweep-fastest acquisitions).
    """

    data: np.ndarray
    axis_order: str = "xyw"
    wavenumbers: np.ndarray | None = field(default=None)
    pixel_size: float | None = None
    fast_axis: str = "x"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"all cube dimensions must be >= 1, got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("cube contains non-finite values")
        if sorted(self.axis_order) != ["w", "x", "y"]:
            raise ValueError(f"axis_order must be a permutation of 'xyw', got {self.axis_order!r}")
        object.__setattr__(self, "fast_axis", canonical_axis(self.fast_axis))
        if self.wavenumbers is not None:
            wn = np.asarray(self.wavenumbers, dtype=np.float64)
            if wn.ndim != 1 or wn.size != data.shape[2]:
                raise ValueError(
                    f"wavenumbers must have length n_w={data.shape[2]}, got {wn.shape}"
                )
            steps = np.diff(wn)
            if not (np.all(steps > 0) or np.all(steps < 0)):
                raise ValueError("wavenumbers must be strictly monotone")
            object.__setattr__(self, "wavenumbers", wn)
        if self.pixel_size is not None and not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_x(self) -> int:
        return self.data.shape[0]

    @property
    def n_y(self) -> int:
        return self.data.shape[1]

    @property
    def n_w(self) -> int:
        return self.data.shape[2]

    def extent(self, axis: str) -> int:
        return self.data.shape[axis_index(axis)]

    def with_data(self, data: np.ndarray, drop_wavenumbers: bool = False) -> "HyperCube":
        """New cube with replaced payload, carrying this cube's metadata."""
        wn = None if drop_wavenumbers else self.wavenumbers
        if wn is not None and np.asarray(data).shape[2] != wn.size:
            wn = None
        return HyperCube(
            data=data,
            axis_order=self.axis_order,
            wavenumbers=wn,
            pixel_size=self.pixel_size,
            fast_axis=self.fast_axis,
        )

    def __eq__(self, other):
        if not isinstance(other, HyperCube):
            return NotImplemented
        same_wn = (
            (self.wavenumbers is None and other.wavenumbers is None)
            or (
                self.wavenumbers is not None
                and other.wavenumbers is not None
                and np.array_equal(self.wavenumbers, other.wavenumbers)
            )
        )
        return (
            self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
            and self.axis_order == other.axis_order
            and same_wn
            and self.pixel_size == other.pixel_size
            and self.fast_axis == other.fast_axis
        )


def sidecar_paths(path) -> tuple[Path, Path]:
    """(json, raw) paths for a cube stem; accepts the stem or either file."""
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def payload_checksum(data: np.ndarray) -> int:
    """CRC32 of the little-endian float32 payload bytes."""
    return zlib.crc32(np.ascontiguousarray(data, dtype="<f4").tobytes()) & 0xFFFFFFFF


def save_cube(cube: HyperCube, path) -> None:
    """Write ``cube`` to ``<path>.json`` + ``<path>.raw``.

    The payload is little-endian float32 in C order (w fastest); the header
    records the CRC32 of those bytes.
    """
    if not isinstance(cube, HyperCube):
        raise TypeError("save_cube expects a HyperCube")
    json_path, raw_path = sidecar_paths(path)
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    header = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "dims": list(cube.data.shape),
        "axis_order": cube.axis_order,
        "dtype": "f32le",
        "fast_axis": cube.fast_axis,
        "checksum": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    if cube.wavenumbers is not None:
        header["wavenumbers"] = [float(v) for v in cube.wavenumbers]
    if cube.pixel_size is not None:
        header["pixel_size_nm"] = float(cube.pixel_size)
    raw_path.write_bytes(payload)
    json_path.write_text(json.dumps(header, indent=2) + "\n")


def load_cube(path) -> HyperCube:
    """Read a cube written by :func:`save_cube`, verifying size and checksum."""
    json_path, raw_path = sidecar_paths(path)
    if not json_path.exists():
        raise FileNotFoundError(f"cube header not found: {json_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"cube payload not found: {raw_path}")
    try:
        header = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise CubeFormatError(f"malformed cube header {json_path}: {exc}") from exc
    for key in ("dims", "axis_order", "dtype", "fast_axis", "checksum"):
        if key not in header:
            raise CubeFormatError(f"cube header {json_path} missing field {key!r}")
    if header["dtype"] != "f32le":
        raise CubeFormatError(f"unsupported dtype {header['dtype']!r} in {json_path}")
    dims = header["dims"]
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise CubeFormatError(f"bad dims {dims} in {json_path}")
    dims = tuple(int(d) for d in dims)
    payload = raw_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * 4
    if len(payload) != expected:
        raise CubeFormatError(
            f"payload size mismatch for {raw_path}: header says {expected} bytes "
            f"({dims[0]}x{dims[1]}x{dims[2]} float32), file has {len(payload)}"
        )
    if (zlib.crc32(payload) & 0xFFFFFFFF) != int(header["checksum"]):
        raise CubeFormatError(f"checksum mismatch for {raw_path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.isfinite(data).all():
        raise CubeFormatError(f"cube payload {raw_path} contains non-finite values")
    return HyperCube(
        data=data,
        axis_order=header["axis_order"],
        wavenumbers=header.get("wavenumbers"),
        pixel_size=header.get("pixel_size_nm"),
        fast_axis=header["fast_axis"],
    )


def slice_frame(cube: HyperCube, axis: str, index: int) -> Image:
    """Extract the 2-D plane at ``index`` along ``axis``.

    Slicing along w yields an (x, y) frame and carries the pixel size;
    slicing along a spatial axis yields a mixed spatial/spectral plane.
    """
    ax = axis_index(axis)
    n = cube.data.shape[ax]
    if not 0 <= int(index) < n:
        raise IndexError(f"index {index} out of range for axis {canonical_axis(axis)} of extent {n}")
    plane = np.take(cube.data, int(index), axis=ax)
    pixel_size = cube.pixel_size if canonical_axis(axis) == "w" else None
    return Image(data=plane, pixel_size=pixel_size)
