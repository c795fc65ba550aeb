"""Noise diagnostics: per-axis spectra, neighbor correlation, noise-vs-signal
curves, and the fluctuation score that picks the permutation axis.

All statistics treat the cube as a bundle of 1-D lines along the probed
axis.  Noise is either ``cube - signal_estimate`` when a reference is
available, or the residual against a per-frame 5x5 spatial median filter
when it is not (single-stack fallback, labeled as estimated in reports).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .cubeio import AXES, HyperCube, axis_index, canonical_axis

# Axis preference for exact fluctuation ties, most preferred first.
TIE_ORDER = ("w", "y", "x")


@dataclass
class NoiseReport:
    """Per-axis noise diagnostics plus the chosen permutation axis."""

    psd: dict = field(default_factory=dict)
    pcc: dict = field(default_factory=dict)
    noise_vs_signal: list = field(default_factory=list)
    fluctuation: dict = field(default_factory=dict)
    selected_axis: str = "w"
    noise_source: str = "median-residual"

    def as_dict(self) -> dict:
        return {
            "psd": {ax: [[float(f), float(p)] for f, p in curve]
                    for ax, curve in self.psd.items()},
            "pcc": {ax: float(v) for ax, v in self.pcc.items()},
            "noise_vs_signal": [[float(m), float(s)] for m, s in self.noise_vs_signal],
            "fluctuation": {ax: float(v) for ax, v in self.fluctuation.items()},
            "selected_axis": self.selected_axis,
            "noise_source": self.noise_source,
        }


def _lines(data: np.ndarray, axis: int) -> np.ndarray:
    """All 1-D lines along ``axis`` as rows of a 2-D array."""
    return np.moveaxis(data, axis, -1).reshape(-1, data.shape[axis])


def _noise_estimate(cube: HyperCube, signal_estimate: HyperCube | None) -> np.ndarray:
    if signal_estimate is not None:
        if signal_estimate.shape != cube.shape:
            raise ValueError(
                f"signal estimate shape {signal_estimate.shape} != cube shape {cube.shape}"
            )
        return cube.data.astype(np.float64) - signal_estimate.data.astype(np.float64)
    data = cube.data.astype(np.float64)
    return data - median_filter(data, size=(5, 5, 1), mode="reflect")


def axis_psd(cube: HyperCube, axis: str) -> list[tuple[float, float]]:
    """One-sided power spectral density along ``axis``, averaged over lines.

    Each line is mean-removed and transformed with a rectangular window;
    interior bins carry the doubled one-sided weight.  The result has
    floor(n/2)+1 (frequency, power) pairs with frequency in cycles/pixel,
    and sum(power) / n equals the mean per-line variance (Parseval).
    """
    ax = axis_index(axis)
    n = cube.data.shape[ax]
    if n < 4:
        raise ValueError(f"axis {canonical_axis(axis)} extent {n} too short for a PSD (need >= 4)")
    lines = _lines(cube.data.astype(np.float64), ax)
    lines = lines - lines.mean(axis=1, keepdims=True)
    spectra = np.abs(np.fft.rfft(lines, axis=1)) ** 2 / n
    mean_spec = spectra.mean(axis=0)
    weights = np.full(mean_spec.size, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    power = weights * mean_spec
    freqs = np.arange(mean_spec.size) / n
    return list(zip(freqs.tolist(), power.tolist()))


def adjacent_pcc(cube: HyperCube, axis: str,
                 signal_estimate: HyperCube | None = None) -> float:
    """Pearson correlation between the noise and its one-pixel shift along
    ``axis``, pooled over every line of the cube."""
    ax = axis_index(axis)
    if cube.data.shape[ax] < 2:
        raise ValueError(f"axis {canonical_axis(axis)} needs extent >= 2 for neighbor pairs")
    noise = _lines(_noise_estimate(cube, signal_estimate), ax)
    a = noise[:, :-1].ravel()
    b = noise[:, 1:].ravel()
    if a.std() == 0 or b.std() == 0:
        raise ValueError(
            f"noise variance along axis {canonical_axis(axis)} is zero; correlation undefined"
        )
    return float(np.corrcoef(a, b)[0, 1])


def noise_vs_signal(cube: HyperCube, tile: int) -> list[tuple[float, float]]:
    """(mean, std) per full spatial tile per spectral frame.

    Tiles are non-overlapping ``tile`` x ``tile`` squares; trailing rows
    and columns that do not fill a tile are dropped.  std uses the n-1
    normalization.
    """
    tile = int(tile)
    n_x, n_y, n_w = cube.shape
    if tile < 2:
        raise ValueError("tile edge must be >= 2")
    if tile > n_x or tile > n_y:
        raise ValueError(f"tile edge {tile} exceeds spatial extents {n_x}x{n_y}")
    m_x, m_y = n_x // tile, n_y // tile
    trimmed = cube.data[: m_x * tile, : m_y * tile].astype(np.float64)
    blocks = trimmed.reshape(m_x, tile, m_y, tile, n_w)
    means = blocks.mean(axis=(1, 3)).ravel()
    stds = blocks.std(axis=(1, 3), ddof=1).ravel()
    return list(zip(means.tolist(), stds.tolist()))


def fluctuation_score(cube: HyperCube, axis: str) -> float:
    """Mean over lines of (mean absolute first difference / line std).

    Scale-free, and decreasing in the lag-1 correlation of the line, so
    the axis with the weakest neighbor correlation scores highest.
    Constant lines carry no information and are skipped; all-constant
    data scores 0.
    """
    ax = axis_index(axis)
    if cube.data.shape[ax] < 4:
        raise ValueError(f"axis {canonical_axis(axis)} extent too short for fluctuation (need >= 4)")
    lines = _lines(cube.data.astype(np.float64), ax)
    diffs = np.abs(np.diff(lines, axis=1)).mean(axis=1)
    stds = lines.std(axis=1)
    valid = stds > 0
    if not valid.any():
        return 0.0
    return float((diffs[valid] / stds[valid]).mean())


def select_permutation_axis(cube: HyperCube,
                            signal_estimate: HyperCube | None = None,
                            tile: int = 4) -> tuple[str, NoiseReport]:
    """Pick the permutation axis and assemble the full noise report.

    The chosen axis maximizes the fluctuation score; exact ties fall to
    the fixed preference w, then y, then x.  The report also carries the
    per-axis PSD and neighbor correlation and a noise-vs-signal curve
    (tile edge clipped to the spatial extents).
    """
    if min(cube.shape) < 4:
        raise ValueError(f"all extents must be >= 4 to select an axis, got {cube.shape}")
    report = NoiseReport(
        noise_source="provided" if signal_estimate is not None else "median-residual",
    )
    for ax in AXES:
        report.fluctuation[ax] = fluctuation_score(cube, ax)
        report.psd[ax] = axis_psd(cube, ax)
        try:
            report.pcc[ax] = adjacent_pcc(cube, ax, signal_estimate)
        except ValueError:
            report.pcc[ax] = 0.0
    best = max(report.fluctuation.values())
    for ax in TIE_ORDER:
        if report.fluctuation[ax] == best:
            report.selected_axis = ax
            break
    edge = min(int(tile), cube.n_x, cube.n_y)
    report.noise_vs_signal = noise_vs_signal(cube, edge)
    return report.selected_axis, report
