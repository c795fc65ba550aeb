"""Image and spectrum quality metrics.

Covers windowed structural similarity, peak signal-to-noise ratio,
ROI-based SNR gain, Fourier ring correlation with the 1/7 resolution
cutoff, discrete Frechet distance (scalar and per-pixel map), and a
two-sided Welch t test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.special import betainc

from .cubeio import HyperCube, Image

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_FRC_THRESHOLD = 1.0 / 7.0


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: Image, b: Image) -> float:
    """Mean local structural similarity over all fully supported 11x11
    Gaussian windows (sigma 1.5), with the dynamic range taken as the
    larger of the two images' ranges."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW} pixels on each side")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    dynamic_range = max(x.max() - x.min(), y.max() - y.min())
    if dynamic_range == 0:
        if np.array_equal(x, y):
            return 1.0
        raise ValueError("both images are constant but unequal; similarity undefined")
    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    xx = convolve2d(x * x, window, mode="valid") - mu_x**2
    yy = convolve2d(y * y, window, mode="valid") - mu_y**2
    xy = convolve2d(x * y, window, mode="valid") - mu_x * mu_y
    c1 = (_SSIM_K1 * dynamic_range) ** 2
    c2 = (_SSIM_K2 * dynamic_range) ** 2
    numer = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    denom = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float((numer / denom).mean())


def psnr(reference: Image, image: Image) -> float:
    """Peak signal-to-noise ratio in dB; the peak is the reference range.
    Identical images return +inf."""
    if reference.shape != image.shape:
        raise ValueError(f"image shapes differ: {reference.shape} vs {image.shape}")
    ref = reference.data.astype(np.float64)
    mse = float(np.mean((ref - image.data.astype(np.float64)) ** 2))
    if mse == 0:
        return math.inf
    peak = float(ref.max() - ref.min())
    if peak == 0:
        raise ValueError("reference image is constant; peak undefined")
    return 10.0 * math.log10(peak**2 / mse)


def _validate_roi(mask: np.ndarray, shape: tuple[int, int], name: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool or mask.shape != shape:
        raise ValueError(f"{name} ROI must be a boolean mask of shape {shape}")
    if not mask.any():
        raise ValueError(f"{name} ROI is empty")
    return mask


def snr_gain(raw: HyperCube, denoised: HyperCube,
             signal_roi: np.ndarray, background_roi: np.ndarray) -> float:
    """Ratio of (signal mean / background std), denoised over raw, pooled
    over every spectral frame."""
    if raw.shape != denoised.shape:
        raise ValueError(f"cube shapes differ: {raw.shape} vs {denoised.shape}")
    spatial = raw.shape[:2]
    sig = _validate_roi(signal_roi, spatial, "signal")
    bg = _validate_roi(background_roi, spatial, "background")
    if (sig & bg).any():
        raise ValueError("signal and background ROIs overlap")

    def ratio(cube: HyperCube) -> float:
        values = cube.data.astype(np.float64)
        mean_signal = float(values[sig].mean())
        std_background = float(values[bg].std())
        if std_background == 0:
            raise ValueError("background std is zero; SNR undefined")
        return mean_signal / std_background
    return ratio(denoised) / ratio(raw)


@dataclass(frozen=True)
class FrcCurve:
    """Ring-by-ring Fourier correlation between two images.

    ``points`` lists (spatial frequency in cycles/pixel, correlation) for
    integer rings 1..N/2.  ``cutoff_frequency`` is where the 3-point
    smoothed curve first drops below 1/7; when it never does, the cutoff
    is pinned to Nyquist and ``hit_nyquist`` is set.  ``resolution`` is
    pixel_size / cutoff (same length unit as pixel_size) or None without
    a pixel size.
    """

    points: tuple
    cutoff_frequency: float
    resolution: float | None
    hit_nyquist: bool


def _center_square(data: np.ndarray) -> np.ndarray:
    side = min(data.shape)
    r0 = (data.shape[0] - side) // 2
    c0 = (data.shape[1] - side) // 2
    return data[r0:r0 + side, c0:c0 + side]


def frc_resolution(a: Image, b: Image) -> FrcCurve:
    """Fourier ring correlation |sum F_a conj(F_b)| / sqrt(sum|F_a|^2 sum|F_b|^2)
    over unit-width integer rings, with the 1/7 cutoff rule."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    xa = _center_square(a.data.astype(np.float64))
    xb = _center_square(b.data.astype(np.float64))
    side = xa.shape[0]
    if side < 16:
        raise ValueError(f"images too small for ring correlation: {side} < 16")
    fa = np.fft.fft2(xa)
    fb = np.fft.fft2(xb)
    fx = np.fft.fftfreq(side) * side
    ring = np.round(np.hypot(fx[:, None], fx[None, :])).astype(np.intp)
    n_rings = side // 2
    cross = np.bincount(ring.ravel(), weights=(fa * np.conj(fb)).real.ravel(),
                        minlength=n_rings + 1)
    cross_im = np.bincount(ring.ravel(), weights=(fa * np.conj(fb)).imag.ravel(),
                           minlength=n_rings + 1)
    pow_a = np.bincount(ring.ravel(), weights=np.abs(fa).ravel() ** 2, minlength=n_rings + 1)
    pow_b = np.bincount(ring.ravel(), weights=np.abs(fb).ravel() ** 2, minlength=n_rings + 1)
    ks = np.arange(1, n_rings + 1)
    denom = np.sqrt(pow_a[ks] * pow_b[ks])
    denom[denom == 0] = np.inf
    corr = np.hypot(cross[ks], cross_im[ks]) / denom
    smoothed = np.array([corr[max(0, i - 1): i + 2].mean() for i in range(corr.size)])
    freqs = ks / side
    below = np.flatnonzero(smoothed < _FRC_THRESHOLD)
    if below.size:
        cutoff = float(freqs[below[0]])
        hit_nyquist = False
    else:
        cutoff = 0.5
        hit_nyquist = True
    pixel_size = a.pixel_size if a.pixel_size is not None else b.pixel_size
    resolution = pixel_size / cutoff if pixel_size is not None else None
    return FrcCurve(
        points=tuple(zip(freqs.tolist(), corr.tolist())),
        cutoff_frequency=cutoff,
        resolution=resolution,
        hit_nyquist=hit_nyquist,
    )


def frechet_distance(p, q) -> float:
    """Discrete Frechet distance between two point sequences.

    Standard dynamic program over the coupling table: entry (i, j) is the
    best achievable leash when walks end at p_i and q_j.
    """
    pa = np.asarray(p, dtype=np.float64)
    qa = np.asarray(q, dtype=np.float64)
    if pa.size == 0 or qa.size == 0:
        raise ValueError("curves must be nonempty")
    if pa.ndim == 1:
        pa = pa[:, None]
    if qa.ndim == 1:
        qa = qa[:, None]
    if pa.shape[1] != qa.shape[1]:
        raise ValueError(f"point dimensions differ: {pa.shape[1]} vs {qa.shape[1]}")
    dist = np.sqrt(((pa[:, None, :] - qa[None, :, :]) ** 2).sum(axis=2))
    m, n = dist.shape
    row = np.empty(n)
    row[0] = dist[0, 0]
    for j in range(1, n):
        row[j] = max(row[j - 1], dist[0, j])
    for i in range(1, m):
        prev = row.copy()
        row[0] = max(prev[0], dist[i, 0])
        for j in range(1, n):
            row[j] = max(dist[i, j], min(prev[j], prev[j - 1], row[j - 1]))
    return float(row[-1])


def spectral_distortion_map(cube: HyperCube, reference: HyperCube) -> Image:
    """Per-pixel Frechet distance between unit-max-normalized spectra.

    Each pixel's spectra become curves of (wavenumber, intensity) points,
    using the cube's wavenumber grid when present and frame indices
    otherwise.  Spectra whose maximum is not positive are left unscaled.
    The dynamic program runs on all pixels at once.
    """
    if cube.shape != reference.shape:
        raise ValueError(f"cube shapes differ: {cube.shape} vs {reference.shape}")
    n_x, n_y, n_w = cube.shape
    grid = cube.wavenumbers if cube.wavenumbers is not None else np.arange(n_w, dtype=np.float64)

    def normalized(data: np.ndarray) -> np.ndarray:
        flat = data.reshape(-1, n_w).astype(np.float64)
        peak = flat.max(axis=1, keepdims=True)
        return np.where(peak > 0, flat / np.where(peak > 0, peak, 1.0), flat)

    ia = normalized(cube.data)
    ib = normalized(reference.data)
    n_pix = ia.shape[0]
    row = np.empty((n_pix, n_w))

    def point_dist(i: int, j: int) -> np.ndarray:
        dx = grid[i] - grid[j]
        dy = ia[:, i] - ib[:, j]
        return np.sqrt(dx * dx + dy * dy)

    row[:, 0] = point_dist(0, 0)
    for j in range(1, n_w):
        row[:, j] = np.maximum(row[:, j - 1], point_dist(0, j))
    for i in range(1, n_w):
        prev = row.copy()
        row[:, 0] = np.maximum(prev[:, 0], point_dist(i, 0))
        for j in range(1, n_w):
            best = np.minimum(np.minimum(prev[:, j], prev[:, j - 1]), row[:, j - 1])
            row[:, j] = np.maximum(point_dist(i, j), best)
    return Image(data=row[:, -1].reshape(n_x, n_y))


def welch_t_test(group_a, group_b) -> tuple[float, float]:
    """Two-sided Welch t test for unequal variances.

    Returns (t, p) with p from the regularized incomplete beta function
    at the Welch-Satterthwaite degrees of freedom.
    """
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 observations")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    pooled = va + vb
    if pooled == 0:
        raise ValueError("both groups have zero variance; test undefined")
    t = (a.mean() - b.mean()) / math.sqrt(pooled)
    df = pooled**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p
