"""Synthetic hyperspectral phantoms and a layered noise generator.

Phantoms are bilinear: each chemical component contributes a spatial
concentration map (disks or Gaussian blobs) times a spectrum (a sum of
Lorentzian lines, with zero-width lines collapsing to a single sample).
The exact factors are returned alongside the cube so unmixing and
denoising tests have a ground truth with zero residual.

Noise is applied in four independent layers with a fixed draw order so a
given (cube, NoiseSpec) pair always produces the same bytes:

1. additive white Gaussian noise (``sigma_iid``),
2. a first-order autoregressive process along the cube's fast-scan axis
   with coefficient ``rho_fast`` and stationary std ``sigma_corr``,
   restarted on every line,
3. signal-proportional Gaussian noise with per-voxel std
   ``k_resonance * clean``,
4. an optional shot-noise stage that replaces the clean value v by
   ``gain * Poisson(v / gain)`` before the additive layers.

Layers with zero amplitude draw nothing from the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .cubeio import HyperCube, axis_index
from .unmix import UnmixResult


@dataclass(frozen=True)
class Shape:
    """One spatial primitive of a concentration map.

    kind "disk" fills amplitude inside ``radius`` of ``center`` (pixels);
    kind "blob" is an isotropic Gaussian, amplitude at the center and
    ``radius`` as its standard deviation.
    """

    kind: str
    center: tuple[float, float]
    radius: float
    amplitude: float

    def __post_init__(self):
        if self.kind not in ("disk", "blob"):
            raise ValueError(f"shape kind must be 'disk' or 'blob', got {self.kind!r}")
        if len(self.center) != 2:
            raise ValueError("shape center must be (cx, cy)")
        if not self.radius > 0:
            raise ValueError("shape radius must be positive")
        if not self.amplitude >= 0:
            raise ValueError("shape amplitude must be nonnegative")


@dataclass(frozen=True)
class Peak:
    """One Lorentzian spectral line: unit shape of height ``height`` at
    ``center`` (frame index units) with half-width ``width``; ``width`` 0
    puts the whole line into the nearest single frame."""

    center: float
    width: float
    height: float

    def __post_init__(self):
        if not self.width >= 0:
            raise ValueError("peak width must be nonnegative")
        if not self.height >= 0:
            raise ValueError("peak height must be nonnegative")


@dataclass(frozen=True)
class Component:
    shapes: tuple[Shape, ...]
    peaks: tuple[Peak, ...]

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "peaks", tuple(self.peaks))
        if not self.shapes:
            raise ValueError("component needs at least one shape")
        if not self.peaks:
            raise ValueError("component needs at least one spectral peak")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    components: tuple[Component, ...]
    background: float = 0.0
    pixel_size: float | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive extents, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("phantom needs at least one component")
        if not self.background >= 0:
            raise ValueError("background must be nonnegative")
        n_w = dims[2]
        for comp in self.components:
            for peak in comp.peaks:
                if not 0 <= peak.center < n_w:
                    raise ValueError(
                        f"peak center {peak.center} outside spectral range [0, {n_w})"
                    )
        if self.pixel_size is not None and not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_iid: float = 0.0
    rho_fast: float = 0.0
    sigma_corr: float = 0.0
    k_resonance: float = 0.0
    poisson_gain: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_iid", "sigma_corr", "k_resonance", "poisson_gain"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.rho_fast < 1:
            raise ValueError("rho_fast must lie in [0, 1)")
        object.__setattr__(self, "seed", int(self.seed))


def component_map(shapes, dims) -> np.ndarray:
    """Render a component's (n_x, n_y) concentration map in float64."""
    n_x, n_y = dims[0], dims[1]
    xx, yy = np.meshgrid(np.arange(n_x, dtype=np.float64),
                         np.arange(n_y, dtype=np.float64), indexing="ij")
    cmap = np.zeros((n_x, n_y))
    for shape in shapes:
        d2 = (xx - shape.center[0]) ** 2 + (yy - shape.center[1]) ** 2
        if shape.kind == "disk":
            cmap += shape.amplitude * (d2 <= shape.radius**2)
        else:
            cmap += shape.amplitude * np.exp(-d2 / (2.0 * shape.radius**2))
    return cmap


def component_spectrum(peaks, n_w: int) -> np.ndarray:
    """Render a component's length-n_w spectrum in float64."""
    grid = np.arange(n_w, dtype=np.float64)
    spec = np.zeros(n_w)
    for peak in peaks:
        if peak.width == 0:
            spec[int(round(peak.center))] += peak.height
        else:
            spec += peak.height * peak.width**2 / ((grid - peak.center) ** 2 + peak.width**2)
    return spec


def make_phantom(spec: PhantomSpec) -> tuple[HyperCube, UnmixResult]:
    """Build the clean cube and the exact factorization that generated it.

    The cube is sum_k C_k(x, y) * S_k(w) plus a flat background.  A positive
    background is carried in the returned factors as one extra component
    (constant map, all-ones spectrum) so C @ S reconstructs the cube with
    zero residual.
    """
    n_x, n_y, n_w = spec.dims
    maps = [component_map(c.shapes, spec.dims) for c in spec.components]
    spectra = [component_spectrum(c.peaks, n_w) for c in spec.components]
    if spec.background > 0:
        maps.append(np.full((n_x, n_y), spec.background))
        spectra.append(np.ones(n_w))
    c_stack = np.stack(maps)
    s_stack = np.stack(spectra)
    clean = np.einsum("kxy,kw->xyw", c_stack, s_stack)
    cube = HyperCube(data=clean, pixel_size=spec.pixel_size)
    k = c_stack.shape[0]
    c_matrix = c_stack.reshape(k, n_x * n_y).T.copy()
    truth = UnmixResult(
        C=c_matrix,
        S=s_stack,
        E=np.zeros((n_x * n_y, n_w)),
        K=k,
        iterations=0,
        converged=True,
    )
    return cube, truth


def _ar1_lines(rng: np.random.Generator, shape, axis: int, rho: float, sigma: float) -> np.ndarray:
    """Stationary AR(1) noise along one array axis, restarted per line.

    The recursion is y[n] = rho * y[n-1] + e[n].  Scaling the first
    innovation of each line to the stationary std and the rest to
    sigma * sqrt(1 - rho^2) makes every sample have variance sigma^2, so
    the lag-1 correlation equals rho from the first pair onward.
    """
    eps = rng.standard_normal(shape)
    scale = np.full(shape[axis], sigma * np.sqrt(1.0 - rho**2))
    scale[0] = sigma
    shaped = [1] * len(shape)
    shaped[axis] = shape[axis]
    eps *= scale.reshape(shaped)
    return lfilter([1.0], [1.0, -rho], eps, axis=axis)


def corrupt(clean: HyperCube, noise: NoiseSpec) -> HyperCube:
    """Apply the noise layers of ``noise`` to ``clean`` deterministically."""
    rng = np.random.default_rng(noise.seed)
    base = clean.data.astype(np.float64)
    total = np.zeros_like(base)
    if noise.sigma_iid > 0:
        total += noise.sigma_iid * rng.standard_normal(base.shape)
    if noise.sigma_corr > 0:
        fast = axis_index(clean.fast_axis)
        total += _ar1_lines(rng, base.shape, fast, noise.rho_fast, noise.sigma_corr)
    if noise.k_resonance > 0:
        total += noise.k_resonance * base * rng.standard_normal(base.shape)
    if noise.poisson_gain > 0:
        lam = np.maximum(base, 0.0) / noise.poisson_gain
        base = noise.poisson_gain * rng.poisson(lam).astype(np.float64)
    return clean.with_data((base + total).astype(np.float32))
