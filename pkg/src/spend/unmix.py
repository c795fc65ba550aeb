"""Chemical unmixing on (N_x*N_y) x N_lambda data matrices.

Three methods over the bilinear model D = C @ S + E with C the per-pixel
concentrations (N rows, K components) and S the component spectra
(K rows, N_lambda channels):

* per-row nonnegative LASSO with caller-supplied penalty,
* MCR-ALS, alternating constrained least squares over C and S,
* spectral phasor analysis (normalized first-harmonic transform) with
  polygon gating in the (g, s) plane.

The LASSO rows and both MCR half-steps share one cyclic coordinate
descent kernel, so the two solvers cannot drift apart numerically.

Pixel raster order is fixed: pixel (x, y) occupies matrix row
x * N_y + y, the C-order flattening of the cube's leading two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cubeio import HyperCube, Image

_KKT_TOL = 1e-6
_TINY = 1e-300


@dataclass(frozen=True)
class DataMatrix:
    """Pixels-by-channels matrix with the spatial dims it was folded from."""

    values: np.ndarray
    dims: tuple[int, int]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        dims = (int(self.dims[0]), int(self.dims[1]))
        if values.ndim != 2:
            raise ValueError(f"data matrix must be 2-D, got shape {values.shape}")
        if values.shape[0] != dims[0] * dims[1]:
            raise ValueError(
                f"row count {values.shape[0]} does not match dims {dims[0]}x{dims[1]}"
            )
        if not np.isfinite(values).all():
            raise ValueError("data matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dims", dims)


@dataclass(frozen=True)
class UnmixResult:
    """Bilinear factorization D ~ C @ S + E.

    C: (N, K) concentrations.  S: (K, N_lambda) spectra.  E: residual,
    exactly D - C @ S for the D the producer saw.  ``collapses`` counts
    dead-component reinitializations during MCR iterations.
    """

    C: np.ndarray
    S: np.ndarray
    E: np.ndarray
    K: int
    iterations: int
    converged: bool
    collapses: int = 0

    def __post_init__(self):
        c = np.asarray(self.C, dtype=np.float64)
        s = np.asarray(self.S, dtype=np.float64)
        e = np.asarray(self.E, dtype=np.float64)
        if c.ndim != 2 or s.ndim != 2 or e.ndim != 2:
            raise ValueError("C, S, E must all be 2-D")
        if c.shape[1] != s.shape[0] or c.shape[1] != self.K:
            raise ValueError(
                f"component counts disagree: C has {c.shape[1]}, S has {s.shape[0]}, K={self.K}"
            )
        if e.shape != (c.shape[0], s.shape[1]):
            raise ValueError(f"residual shape {e.shape} != {(c.shape[0], s.shape[1])}")
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "E", e)

    def reconstruction(self) -> np.ndarray:
        return self.C @ self.S


@dataclass
class PhasorMap:
    """Per-pixel phasor coordinates g = Re G, s = -Im G of the normalized
    harmonic transform, plus named masks gathered by polygon selection.
    ``zero_total`` flags pixels whose spectrum summed to zero; they are
    pinned to the origin and excluded from selections."""

    g: np.ndarray
    s: np.ndarray
    zero_total: np.ndarray
    harmonic: int
    masks: dict = field(default_factory=dict)


def reshape_cube(cube: HyperCube) -> DataMatrix:
    """Fold a cube to a matrix: row x * N_y + y holds pixel (x, y)'s spectrum."""
    n_x, n_y, n_w = cube.shape
    return DataMatrix(values=cube.data.reshape(n_x * n_y, n_w), dims=(n_x, n_y))


def unreshape(column: np.ndarray, dims: tuple[int, int]) -> Image:
    """Unfold one matrix column (or any per-pixel vector) back to an image."""
    col = np.asarray(column, dtype=np.float64).ravel()
    n_x, n_y = int(dims[0]), int(dims[1])
    if col.size != n_x * n_y:
        raise ValueError(f"vector length {col.size} does not match dims {n_x}x{n_y}")
    return Image(data=col.reshape(n_x, n_y))


def _cd_nonneg(G: np.ndarray, B: np.ndarray, lam: float,
               max_sweeps: int = 5000) -> tuple[np.ndarray, int, bool]:
    """Cyclic coordinate descent for rows of X >= 0 minimizing
    ½ x G xᵀ - x·b + lam*sum(x), one independent problem per row of B.

    Returns (X, sweeps used, KKT satisfied).  The stationarity check is
    relative: per row, violations are compared against
    max(|b|_inf, lam) * 1e-6.
    """
    n_rows, k = B.shape
    diag = np.diag(G).copy()
    if np.any(diag <= 0):
        raise ValueError("Gram matrix has a nonpositive diagonal (zero spectrum row)")
    X = np.zeros((n_rows, k))
    scale = np.maximum(np.abs(B).max(axis=1), lam)
    scale = np.maximum(scale, _TINY)
    sweeps = 0
    ok = False
    while sweeps < max_sweeps:
        sweeps += 1
        for j in range(k):
            resid_j = B[:, j] - lam - (X @ G[:, j] - X[:, j] * diag[j])
            X[:, j] = np.maximum(resid_j / diag[j], 0.0)
        grad = X @ G - B + lam
        viol = np.where(X > 0, np.abs(grad), np.maximum(-grad, 0.0))
        if np.all(viol.max(axis=1) <= _KKT_TOL * scale):
            ok = True
            break
    return X, sweeps, ok


def _lstsq_rows(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Unconstrained minimizer rows: X G = B, via a symmetric solve."""
    try:
        return np.linalg.solve(G, B.T).T
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, B.T, rcond=None)[0].T


def lasso_unmix(D: DataMatrix, S: np.ndarray, lam: float) -> UnmixResult:
    """Solve the per-pixel nonnegative LASSO against reference spectra S.

    Each row c of the result minimizes ½||d - c @ S||² + lam*sum(c)
    subject to c >= 0, solved to a relative KKT tolerance of 1e-6.
    """
    s = np.asarray(S, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != D.values.shape[1]:
        raise ValueError(f"reference spectra shape {s.shape} incompatible with data {D.values.shape}")
    if not np.isfinite(s).all():
        raise ValueError("reference spectra contain non-finite values")
    if np.any(np.abs(s).max(axis=1) == 0):
        raise ValueError("reference spectra contain an all-zero row")
    if not lam >= 0:
        raise ValueError("lasso penalty must be nonnegative")
    gram = s @ s.T
    corr = D.values @ s.T
    C, sweeps, ok = _cd_nonneg(gram, corr, float(lam))
    E = D.values - C @ s
    return UnmixResult(C=C, S=s, E=E, K=s.shape[0], iterations=sweeps, converged=ok)


@dataclass(frozen=True)
class McrOptions:
    max_iter: int = 200
    tol: float = 1e-10
    nonneg_c: bool = True
    nonneg_s: bool = True
    fix_s: bool = False


def mcr_als(D: DataMatrix, S_init: np.ndarray, opts: McrOptions = McrOptions()) -> UnmixResult:
    """Alternating least squares for D ~ C @ S from an initial spectra guess.

    Each full iteration solves C given S, then (unless fix_s) S given C,
    both under optional nonnegativity, then rescales S rows to unit max
    with the inverse factor folded into C.  Stops when the relative drop
    of the residual Frobenius norm falls below opts.tol.  A component
    whose concentration column dies is restarted from the largest-norm
    residual row and counted in ``collapses``.
    """
    d = D.values
    s = np.asarray(S_init, dtype=np.float64).copy()
    if s.ndim != 2 or s.shape[1] != d.shape[1]:
        raise ValueError(f"S_init shape {s.shape} incompatible with data {d.shape}")
    if np.any(np.abs(s).max(axis=1) == 0):
        raise ValueError("S_init contains an all-zero row")
    k = s.shape[0]
    c = np.zeros((d.shape[0], k))
    prev = np.linalg.norm(d)
    collapses = 0
    converged = False
    iterations = 0

    def revive(j: int) -> None:
        # Restart component j's spectrum from the residual row of largest
        # norm; its concentration column is zero, so the swap leaves the
        # current reconstruction untouched.
        nonlocal collapses
        resid = d - c @ s
        row = resid[np.argmax(np.linalg.norm(resid, axis=1))]
        fresh = np.maximum(row, 0.0) if opts.nonneg_s else row
        s[j] = fresh if np.abs(fresh).max() > 0 else np.ones(d.shape[1])
        collapses += 1

    for iterations in range(1, opts.max_iter + 1):
        for j in np.flatnonzero(np.abs(s).max(axis=1) == 0):
            c[:, j] = 0.0
            revive(j)
        gram_s = s @ s.T
        corr_c = d @ s.T
        if opts.nonneg_c:
            c, _, _ = _cd_nonneg(gram_s, corr_c, 0.0)
        else:
            c = _lstsq_rows(gram_s, corr_c)
        for j in np.flatnonzero(np.abs(c).max(axis=0) == 0):
            revive(j)
        if not opts.fix_s:
            # Solve only components with live concentration columns; a dead
            # column's spectrum keeps its reinitialized value for the next
            # C-step to pick up.
            live = np.abs(c).max(axis=0) > 0
            if live.any():
                cl = c[:, live]
                gram_c = cl.T @ cl
                corr_s = d.T @ cl
                if opts.nonneg_s:
                    st, _, _ = _cd_nonneg(gram_c, corr_s, 0.0)
                else:
                    st = _lstsq_rows(gram_c, corr_s)
                s[live] = st.T
            peaks = np.abs(s).max(axis=1)
            pos = peaks > 0
            s[pos] /= peaks[pos, None]
            c[:, pos] *= peaks[pos]
        resid_norm = np.linalg.norm(d - c @ s)
        if abs(prev - resid_norm) <= opts.tol * max(prev, _TINY):
            converged = True
            break
        prev = resid_norm
    return UnmixResult(
        C=c, S=s, E=d - c @ s, K=k,
        iterations=iterations, converged=converged, collapses=collapses,
    )


def spectral_phasor(cube: HyperCube, harmonic: int = 1) -> PhasorMap:
    """Map each pixel spectrum to the complex plane via its normalized
    harmonic component: G = sum_n I(n) exp(-2i*pi*h*n/N) / sum_n I(n),
    reported as g = Re G, s = -Im G.  Zero-total pixels go to the origin
    and are flagged in ``zero_total``."""
    n_w = cube.n_w
    if n_w < 2:
        raise ValueError("phasor analysis needs at least 2 spectral frames")
    h = int(harmonic)
    if not 1 <= h < n_w:
        raise ValueError(f"harmonic must lie in [1, {n_w - 1}], got {harmonic}")
    data = cube.data.astype(np.float64)
    kernel = np.exp(-2j * np.pi * h * np.arange(n_w) / n_w)
    numer = data @ kernel
    total = data.sum(axis=2)
    zero = total == 0
    denom = np.where(zero, 1.0, total)
    G = numer / denom
    g = np.where(zero, 0.0, G.real)
    s = np.where(zero, 0.0, -G.imag)
    return PhasorMap(g=g, s=s, zero_total=zero, harmonic=h)


def _points_in_polygon(px: np.ndarray, py: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = polygon.shape[0]
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)
    return inside


def phasor_select(pmap: PhasorMap, polygon, cube: HyperCube,
                  name: str = "selection") -> tuple[np.ndarray, np.ndarray]:
    """Gate pixels whose (g, s) falls inside ``polygon`` (even-odd rule).

    Returns the boolean pixel mask and the mean spectrum over it; the mask
    is also stored in ``pmap.masks[name]``.  Zero-total pixels never
    select.  An empty selection is an error naming the polygon.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise ValueError(f"polygon {name!r} must have at least 3 (g, s) vertices")
    if pmap.g.shape != cube.shape[:2]:
        raise ValueError("phasor map and cube have different spatial dims")
    mask = _points_in_polygon(pmap.g, pmap.s, poly) & ~pmap.zero_total
    if not mask.any():
        raise ValueError(f"polygon {name!r} selected no pixels")
    spectrum = cube.data[mask].astype(np.float64).mean(axis=0)
    pmap.masks[name] = mask
    return mask, spectrum
