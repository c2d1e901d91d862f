"""Companding codebooks: point density -> CDF table -> K-level quantizer.

A point density lambda is tabulated into its CDF G on a uniform grid; the
codebook then places reproduction levels at the shape quantiles
``r_i = G^{-1}((i - 1/2) / K)``.  Quantization boundaries are the midpoints
of adjacent levels (the nearest-neighbor rule, optimal for any fixed
codebook); the equal-mass partition points ``G^{-1}(i/K)`` coincide with
them to second order and are exposed separately for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gauss_model import DensityShape
from .quadrature import cumulative_trapezoid

DEFAULT_GRID_SIZE = 65536
DEFAULT_CDF_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PointDensity:
    """Normalized point density with a tabulated CDF on [-R, R].

    ``xs`` and ``cdf`` form the monotone CDF table; ``normalization`` is the
    integral of the raw shape over the truncation, so the normalized density
    is ``shape(x) / normalization``.
    """

    shape: DensityShape
    normalization: float
    xs: np.ndarray
    cdf: np.ndarray
    truncation_radius: float
    tol: float = DEFAULT_CDF_TOL

    def __post_init__(self):
        if self.normalization <= 0:
            raise ValueError("normalization must be positive")
        if np.any(np.diff(self.xs) <= 0):
            raise ValueError("cdf grid must be strictly increasing")
        inc = np.diff(self.cdf)
        if np.any(inc < 0):
            raise ValueError("cdf table must be non-decreasing")
        ties = inc == 0.0
        if np.any(ties):
            # Exact ties appear where float64 accumulation saturates (an
            # increment below one ulp of the running sum); that is normal in
            # the far tails but means a vanishing density anywhere else.
            interior = (self.cdf[:-1] > 1e-12) & (self.cdf[1:] < 1.0 - 1e-12)
            if np.any(ties & interior):
                raise ValueError("cdf table stalls inside the bulk: density is not strictly positive")
        if abs(self.cdf[0]) > self.tol or abs(self.cdf[-1] - 1.0) > self.tol:
            raise ValueError("cdf must run from 0 to 1 over the truncation")
        keep = np.concatenate(([True], inc > 0))
        object.__setattr__(self, "_cdf_inv", self.cdf[keep])
        object.__setattr__(self, "_xs_inv", self.xs[keep])

    def pdf(self, x):
        """Normalized density lambda(x)."""
        return np.asarray(self.shape(x), dtype=float) / self.normalization

    def cdf_at(self, x):
        """Piecewise-linear CDF interpolated from the table."""
        return np.interp(x, self.xs, self.cdf)


def tabulate_cdf(
    density: DensityShape,
    radius: float | None = None,
    grid_size: int = DEFAULT_GRID_SIZE,
    tol: float = DEFAULT_CDF_TOL,
) -> PointDensity:
    """Tabulate the CDF of a density shape on a uniform grid over [-R, R].

    Trapezoid accumulation keeps the table monotone for positive shapes; the
    result is normalized so G(R) = 1 exactly.
    """
    if grid_size < 1024:
        raise ValueError(f"grid_size must be at least 1024, got {grid_size}")
    if radius is None:
        radius = density.support_hint
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    xs = np.linspace(-radius, radius, grid_size)
    vals = np.asarray(density(xs), dtype=float)
    if np.any(vals < 0):
        raise ValueError("density shape evaluated negative on the grid")
    raw = cumulative_trapezoid(vals, xs)
    normalization = raw[-1]
    if normalization < tol:
        raise ValueError(f"degenerate density: total mass {normalization!r} below tol")
    cdf = raw / normalization
    cdf[-1] = 1.0
    return PointDensity(
        shape=density,
        normalization=float(normalization),
        xs=xs,
        cdf=cdf,
        truncation_radius=float(radius),
        tol=tol,
    )


def invert_cdf(pd: PointDensity, p) -> np.ndarray | float:
    """Quantile function G^{-1}(p) for p in [0, 1].

    Bisection is implicit in the sorted-table lookup; a refinement step
    against a local Simpson model of G (using the density itself) removes
    most of the piecewise-linear interpolation error.  p = 0 and p = 1 clamp
    to the truncation edges.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0.0) or np.any(p_arr > 1.0):
        raise ValueError("p must lie in [0, 1]")
    x0 = np.interp(p_arr, pd._cdf_inv, pd._xs_inv)

    # local refinement: Newton step on G(x) - p with G rebuilt from the
    # nearest grid point by 3-node Simpson, exact to O(h^5)
    idx = np.clip(np.searchsorted(pd.xs, x0) - 1, 0, len(pd.xs) - 2)
    xg = pd.xs[idx]
    gg = pd.cdf[idx]
    lam_g = pd.pdf(xg)
    lam_m = pd.pdf(0.5 * (xg + x0))
    lam_0 = pd.pdf(x0)
    g_local = gg + (x0 - xg) / 6.0 * (lam_g + 4.0 * lam_m + lam_0)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(lam_0 > 0, (g_local - p_arr) / np.where(lam_0 > 0, lam_0, 1.0), 0.0)
    h = pd.xs[1] - pd.xs[0]
    x1 = x0 - np.clip(step, -h, h)
    x1 = np.clip(x1, -pd.truncation_radius, pd.truncation_radius)
    x1 = np.where(p_arr <= 0.0, -pd.truncation_radius, x1)
    x1 = np.where(p_arr >= 1.0, pd.truncation_radius, x1)
    if np.isscalar(p) or p_arr.ndim == 0:
        return float(x1)
    return x1


@dataclass(frozen=True, eq=False)
class Codebook:
    """Ordered reproduction levels plus induced nearest-neighbor boundaries.

    ``boundaries`` has K+1 entries; the outermost are -inf/+inf so every
    real input maps to a level.  Cells are half-open ``[b_{i-1}, b_i)``:
    a point exactly on a boundary belongs to the right cell.
    """

    levels: np.ndarray
    boundaries: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        bounds = np.asarray(self.boundaries, dtype=float)
        if levels.ndim != 1 or levels.size < 1:
            raise ValueError("levels must be a nonempty 1-D array")
        if bounds.shape != (levels.size + 1,):
            raise ValueError("boundaries must have exactly K+1 entries")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        interior = bounds[1:-1]
        if interior.size and np.any(np.diff(interior) <= 0):
            raise ValueError("interior boundaries must be strictly increasing")
        if np.any(levels < bounds[:-1]) or np.any(levels > bounds[1:]):
            raise ValueError("each level must lie inside its cell")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "boundaries", bounds)

    @classmethod
    def from_levels(cls, levels) -> "Codebook":
        """Nearest-neighbor codebook: boundaries at midpoints of adjacent levels."""
        levels = np.asarray(levels, dtype=float)
        if levels.ndim != 1 or levels.size < 1:
            raise ValueError("levels must be a nonempty 1-D array")
        interior = 0.5 * (levels[:-1] + levels[1:])
        bounds = np.concatenate(([-np.inf], interior, [np.inf]))
        return cls(levels=levels, boundaries=bounds)

    @property
    def size(self) -> int:
        return int(self.levels.size)

    def indices(self, x) -> np.ndarray:
        """Cell index of each input; boundary ties go to the right cell."""
        return np.searchsorted(self.boundaries[1:-1], np.asarray(x, dtype=float), side="right")

    def quantize(self, x) -> np.ndarray:
        """Map inputs to their nearest reproduction level."""
        return self.levels[self.indices(x)]

    def scaled(self, s: float) -> "Codebook":
        """Codebook for inputs scaled by s > 0 (levels and boundaries scale)."""
        if not s > 0:
            raise ValueError(f"scale must be positive, got {s}")
        return Codebook(levels=self.levels * s, boundaries=self.boundaries * s)

    def to_csv(self, path) -> None:
        """Write `level_index,level,lower_boundary,upper_boundary` rows."""
        with open(path, "w", encoding="ascii", newline="") as fh:
            fh.write("level_index,level,lower_boundary,upper_boundary\n")
            for i in range(self.size):
                lo, hi = self.boundaries[i], self.boundaries[i + 1]
                fh.write(f"{i},{self.levels[i]:.17g},{_fmt_bound(lo)},{_fmt_bound(hi)}\n")


def _fmt_bound(v: float) -> str:
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return f"{v:.17g}"


def build_compander_codebook(pd: PointDensity, K: int) -> Codebook:
    """K-level companding codebook with levels at the (i - 1/2)/K quantiles."""
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    ps = (np.arange(K) + 0.5) / K
    levels = np.asarray(invert_cdf(pd, ps), dtype=float).reshape(-1)
    return Codebook.from_levels(levels)


def equal_mass_edges(pd: PointDensity, K: int) -> np.ndarray:
    """Equal-mass partition points G^{-1}(i/K), i = 0..K.

    These are the asymptotic cell edges of the compander; quantization uses
    the nearest-neighbor midpoints instead, to which they are second-order
    close.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    ps = np.arange(K + 1) / K
    return np.asarray(invert_cdf(pd, ps), dtype=float).reshape(-1)
