"""Baseline quantizer constructions and the weighted Lloyd-Max oracle.

Every quantizer reduces to a :class:`~mmquant.compander.Codebook`; the kinds
are:

* ``matmul_opt``        product-aware compander (correlation rho, scaled by sigma-hat)
* ``gaussian_compander``rho = 0 special case of the above
* ``lloyd_max``         iteratively optimal scalar quantizer for a Gaussian source
* ``uniform_clipped``   evenly spaced levels on [-c, c], c grid-searched
* ``mu_law`` / ``a_law``ITU G.711 companders adapted to continuous input
* ``nf4``               Gaussian quantile-midpoint codebook, grid-searched scale
* ``nvfp4``             fixed 15-value E2M1 codebook, grid-searched scale
* ``int8_symmetric``    256 even levels on [-1, 1] (for per-token-scaled input)
* ``fp8_e4m3``          finite values of an 8-bit float format (E4M3 or E5M2)

Grid searches minimize empirical entrywise MSE on the matrix being
quantized, with ties broken toward the smaller scale.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .compander import Codebook, DEFAULT_GRID_SIZE, build_compander_codebook, tabulate_cdf
from .gauss_model import BivariatePairSpec, optimal_density_shape, STANDARD_TRUNCATION
from .quadrature import cumulative_trapezoid

KINDS = (
    "matmul_opt",
    "gaussian_compander",
    "lloyd_max",
    "uniform_clipped",
    "mu_law",
    "a_law",
    "nf4",
    "nvfp4",
    "int8_symmetric",
    "fp8_e4m3",
)

# kinds whose codebook is fixed up to the mandatory per-token scaling
FIXED_LEVEL_COUNTS = {"nvfp4": 15, "int8_symmetric": 256, "fp8_e4m3": 256}

MU_LAW_MU = 255.0
A_LAW_A = 87.6


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer kind, level count, and kind-specific parameters."""

    kind: str
    K: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quantizer kind {self.kind!r}; expected one of {KINDS}")
        if self.K is not None and self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}")


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of a scale/clip grid search."""

    chosen_scale_or_clip: float
    grid: np.ndarray
    empirical_mse_at_choice: float


def nearest_quantize(cb: Codebook, x: float) -> tuple[int, float]:
    """Nearest level of ``x`` in squared error; ties go to the larger level."""
    idx = int(cb.indices(x))
    return idx, float(cb.levels[idx])


def calibrate_scale(
    codebook_shape: Codebook,
    data,
    grid_lo: float,
    grid_hi: float,
    grid_points: int,
) -> CalibrationResult:
    """Exhaustive scale search minimizing entrywise MSE of nearest quantization.

    All-zero data short-circuits to ``grid_lo`` with zero reported MSE.
    """
    if grid_points < 1:
        raise ValueError(f"grid_points must be at least 1, got {grid_points}")
    flat = np.asarray(data, dtype=float).ravel()
    if flat.size == 0:
        raise ValueError("calibration data must be nonempty")
    grid = np.linspace(grid_lo, grid_hi, grid_points)
    if not np.any(flat):
        return CalibrationResult(float(grid_lo), grid, 0.0)
    best_s = None
    best_mse = math.inf
    for s in grid:
        err = codebook_shape.scaled(float(s)).quantize(flat) - flat
        mse = float(np.mean(np.square(err)))
        if mse < best_mse:
            best_mse = mse
            best_s = float(s)
    return CalibrationResult(best_s, grid, best_mse)


# ---------------------------------------------------------------------------
# Weighted Lloyd-Max
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LloydMaxResult:
    """Codebook plus convergence diagnostics of the alternating iteration."""

    codebook: Codebook
    distortions: np.ndarray
    n_iterations: int
    n_reseeds: int
    converged: bool


def _quantile_midpoint_init(h, K: int, radius: float, grid: int = 16384) -> np.ndarray:
    """Initial levels at the quantile midpoints of the point density h^(1/3).

    Unlike the compander tables, this tolerates densities that vanish on
    interior regions (flat CDF stretches are collapsed before inversion);
    Lloyd-Max itself has no positivity requirement.
    """
    xs = np.linspace(-radius, radius, grid)
    vals = np.cbrt(np.asarray(h(xs), dtype=float))
    if np.any(vals < 0):
        raise ValueError("source density evaluated negative")
    cdf = cumulative_trapezoid(vals, xs)
    total = cdf[-1]
    if total <= 0:
        raise ValueError("source density carries no mass on the support")
    cdf = cdf / total
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    levels = np.interp((np.arange(K) + 0.5) / K, cdf[keep], xs[keep])
    if np.any(np.diff(levels) <= 0):
        raise ValueError(f"density too degenerate to seed {K} distinct levels")
    return levels


def _cell_stats(
    h: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    levels: np.ndarray,
    panels: int = 64,
    outer_panels: int = 1024,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell Simpson integrals of h, x h, and h (x - level)^2.

    The outermost cells run to the truncation radius and are much wider than
    interior ones, so they get their own finer panel count.
    """
    K = levels.size

    def block(sl: slice, p: int):
        n_nodes = 2 * p + 1
        t = np.linspace(0.0, 1.0, n_nodes)
        blo, bhi = lo[sl], hi[sl]
        x = blo[:, None] + (bhi - blo)[:, None] * t
        hv = h(x)
        w = np.ones(n_nodes)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        wq = ((bhi - blo) / (6.0 * p))[:, None] * w
        mass = (hv * wq).sum(axis=1)
        moment = (x * hv * wq).sum(axis=1)
        dist = (hv * np.square(x - levels[sl, None]) * wq).sum(axis=1)
        return mass, moment, dist

    if K <= 2:
        return block(slice(0, K), outer_panels)
    first = block(slice(0, 1), outer_panels)
    inner = block(slice(1, K - 1), panels)
    last = block(slice(K - 1, K), outer_panels)
    return tuple(np.concatenate(parts) for parts in zip(first, inner, last))


def weighted_mse(cb: Codebook, h: Callable[[np.ndarray], np.ndarray], radius: float, panels: int = 64) -> float:
    """Integral of h(x) (x - Q(x))^2 over [-radius, radius], cell by cell."""
    lo = np.clip(cb.boundaries[:-1], -radius, radius)
    hi = np.clip(cb.boundaries[1:], -radius, radius)
    _, _, dist = _cell_stats(h, lo, hi, cb.levels, panels=panels)
    return float(dist.sum())


def lloyd_max_detailed(
    K: int,
    source_density: Callable[[np.ndarray], np.ndarray],
    weight: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 200,
    tol_linf: float = 1e-9,
    support_radius: float = STANDARD_TRUNCATION,
    panels: int = 64,
    initial_levels=None,
) -> LloydMaxResult:
    """Weighted Lloyd-Max with full diagnostics.

    Alternates (i) boundaries at midpoints of adjacent levels with (ii)
    levels at per-cell centroids of the weighted measure f*w.  Initial
    levels sit at the quantile midpoints of the optimal point density
    (f*w)^(1/3) — for w = 1 the classic high-rate layout — which keeps the
    iteration a local polish instead of a slow global migration; pass
    ``initial_levels`` to start elsewhere.  Per-cell expectations use
    composite Simpson on the tabulated density, so runs are deterministic.

    Cells that lose all mass are re-seeded at their midpoint; the count of
    such events is reported.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if tol_linf <= 0:
        raise ValueError(f"tol_linf must be positive, got {tol_linf}")
    if weight is None:
        w = lambda x: np.ones_like(np.asarray(x, dtype=float))
    else:
        w = weight
        probe = np.asarray(w(np.linspace(-support_radius, support_radius, 257)), dtype=float)
        if np.any(probe <= 0):
            raise ValueError("weight must be strictly positive on the support")

    def h(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(source_density(x), dtype=float) * np.asarray(w(x), dtype=float)

    if initial_levels is None:
        levels = _quantile_midpoint_init(h, K, support_radius)
    else:
        levels = np.asarray(initial_levels, dtype=float)
        if levels.shape != (K,) or np.any(np.diff(levels) <= 0):
            raise ValueError("initial_levels must be K strictly increasing values")

    distortions = []
    n_reseeds = 0
    converged = False
    n_iter = 0
    cb = Codebook.from_levels(levels)
    for n_iter in range(1, max_iter + 1):
        interior = 0.5 * (levels[:-1] + levels[1:])
        edges = np.concatenate(([-support_radius], interior, [support_radius]))
        lo, hi = edges[:-1], edges[1:]
        mass, moment, _ = _cell_stats(h, lo, hi, levels, panels=panels)
        total = float(mass.sum())
        empty = mass <= 1e-15 * total
        n_reseeds += int(empty.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            centroids = moment / np.where(empty, 1.0, mass)
        new_levels = np.where(empty, 0.5 * (lo + hi), centroids)
        delta = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        cb = Codebook.from_levels(levels)
        distortions.append(weighted_mse(cb, h, support_radius, panels=panels))
        if delta <= tol_linf:
            converged = True
            break
    return LloydMaxResult(
        codebook=cb,
        distortions=np.asarray(distortions),
        n_iterations=n_iter,
        n_reseeds=n_reseeds,
        converged=converged,
    )


def lloyd_max(
    K: int,
    source_density: Callable[[np.ndarray], np.ndarray],
    weight: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 200,
    tol_linf: float = 1e-9,
    support_radius: float = STANDARD_TRUNCATION,
) -> Codebook:
    """Weighted Lloyd-Max codebook (see :func:`lloyd_max_detailed`)."""
    return lloyd_max_detailed(
        K, source_density, weight, max_iter=max_iter, tol_linf=tol_linf, support_radius=support_radius
    ).codebook


# ---------------------------------------------------------------------------
# Unit codebooks (level scale 1); scaled copies are cheap and exact
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _unit_matmul_opt_codebook(rho: float, K: int, grid_size: int = DEFAULT_GRID_SIZE) -> Codebook:
    spec = BivariatePairSpec(1.0, 1.0, rho)
    pd = tabulate_cdf(optimal_density_shape(spec), grid_size=grid_size)
    return build_compander_codebook(pd, K)


@functools.lru_cache(maxsize=None)
def _unit_lloyd_max_codebook(K: int) -> Codebook:
    def std_normal(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)

    return lloyd_max_detailed(K, std_normal, None, max_iter=200, tol_linf=1e-10).codebook


def mu_law_compress(x, mu: float = MU_LAW_MU):
    """ITU mu-law compressor on [-1, 1]: sgn(x) ln(1 + mu|x|) / ln(1 + mu)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / math.log1p(mu)


def mu_law_expand(y, mu: float = MU_LAW_MU):
    y = np.asarray(y, dtype=float)
    return np.sign(y) * (np.expm1(np.abs(y) * math.log1p(mu))) / mu


def a_law_compress(x, A: float = A_LAW_A):
    """ITU A-law compressor on [-1, 1]: linear below 1/A, logarithmic above."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    denom = 1.0 + math.log(A)
    small = ax < 1.0 / A
    out = np.where(small, A * ax / denom, (1.0 + np.log(np.where(small, 1.0, A * ax))) / denom)
    return np.sign(x) * out


def a_law_expand(y, A: float = A_LAW_A):
    y = np.asarray(y, dtype=float)
    ay = np.abs(y)
    denom = 1.0 + math.log(A)
    knee = 1.0 / denom
    small = ay < knee
    out = np.where(small, ay * denom / A, np.exp(ay * denom - 1.0) / A)
    return np.sign(y) * out


@functools.lru_cache(maxsize=None)
def _unit_mu_law_codebook(K: int, mu: float = MU_LAW_MU) -> Codebook:
    y = np.linspace(-1.0, 1.0, K)
    return Codebook.from_levels(mu_law_expand(y, mu))


@functools.lru_cache(maxsize=None)
def _unit_a_law_codebook(K: int, A: float = A_LAW_A) -> Codebook:
    y = np.linspace(-1.0, 1.0, K)
    return Codebook.from_levels(a_law_expand(y, A))


@functools.lru_cache(maxsize=None)
def _nf4_unit_codebook(K: int) -> Codebook:
    q = ndtri((np.arange(K) + 0.5) / K)
    q = q / np.max(np.abs(q))
    return Codebook.from_levels(np.clip(q, -1.0, 1.0))


NVFP4_VALUES = np.array(
    [-6.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]
)


@functools.lru_cache(maxsize=None)
def float8_values(variant: str = "e4m3") -> np.ndarray:
    """Sorted finite values of an 8-bit float format (no infinities or NaN)."""
    if variant == "e4m3":
        n_exp, n_man, bias = 4, 3, 7
    elif variant == "e5m2":
        n_exp, n_man, bias = 5, 2, 15
    else:
        raise ValueError(f"unknown float8 variant {variant!r}; expected 'e4m3' or 'e5m2'")
    e_max = 2**n_exp - 1
    man_den = float(2**n_man)
    vals = {0.0}
    for e in range(e_max + 1):
        for m in range(2**n_man):
            if variant == "e4m3" and e == e_max and m == 2**n_man - 1:
                continue  # NaN encoding
            if variant == "e5m2" and e == e_max:
                continue  # infinities and NaNs
            if e == 0:
                v = (m / man_den) * 2.0 ** (1 - bias)
            else:
                v = (1.0 + m / man_den) * 2.0 ** (e - bias)
            if v:
                vals.add(v)
                vals.add(-v)
    return np.array(sorted(vals))


def _sigma_hat(config: QuantizerConfig, calibration_data) -> float:
    if "sigma_hat" in config.params:
        s = float(config.params["sigma_hat"])
        if not s > 0:
            raise ValueError(f"params['sigma_hat'] must be positive, got {s}")
        return s
    if calibration_data is None:
        raise ValueError(f"kind {config.kind!r} requires calibration data (or params['sigma_hat'])")
    arr = np.asarray(calibration_data, dtype=float)
    if arr.size == 0:
        raise ValueError("calibration data must be nonempty")
    s = float(np.std(arr))
    if not s > 0:
        raise ValueError("calibration data has zero variance; cannot set the quantizer scale")
    return s


def _require_levels(config: QuantizerConfig) -> int:
    if config.K is None:
        raise ValueError(f"kind {config.kind!r} requires an explicit level count K")
    return config.K


def _check_fixed_k(config: QuantizerConfig) -> None:
    fixed = FIXED_LEVEL_COUNTS[config.kind]
    if config.K is not None and config.K != fixed:
        raise ValueError(f"kind {config.kind!r} has a fixed codebook of {fixed} levels; got K={config.K}")


def _require_calibration(config: QuantizerConfig, calibration_data):
    if calibration_data is None:
        raise ValueError(f"kind {config.kind!r} requires calibration data for its scale search")
    arr = np.asarray(calibration_data, dtype=float)
    if arr.size == 0:
        raise ValueError("calibration data must be nonempty")
    return arr


def build_quantizer(config: QuantizerConfig, calibration_data=None) -> Codebook:
    """Construct the codebook described by ``config``.

    Kinds with a free scale read sigma-hat (population standard deviation)
    from the calibration matrix unless ``params['sigma_hat']`` overrides it;
    grid-searched kinds additionally need the calibration matrix itself
    unless the searched quantity (``clip`` / ``scale``) is pinned in params.
    """
    kind = config.kind
    params = config.params

    if kind in ("matmul_opt", "gaussian_compander"):
        if kind == "matmul_opt":
            if "rho" not in params:
                raise ValueError("matmul_opt requires params['rho']")
            rho = float(params["rho"])
        else:
            rho = 0.0
        K = _require_levels(config)
        sigma = _sigma_hat(config, calibration_data)
        return _unit_matmul_opt_codebook(rho, K).scaled(sigma)

    if kind == "lloyd_max":
        K = _require_levels(config)
        sigma = _sigma_hat(config, calibration_data)
        return _unit_lloyd_max_codebook(K).scaled(sigma)

    if kind == "uniform_clipped":
        K = _require_levels(config)
        if K < 2:
            raise ValueError("uniform_clipped requires K >= 2")
        unit = Codebook.from_levels(np.linspace(-1.0, 1.0, K))
        if "clip" in params:
            c = float(params["clip"])
        else:
            data = _require_calibration(config, calibration_data)
            sigma = _sigma_hat(config, calibration_data)
            c = calibrate_scale(unit, data, 1.5 * sigma, 5.0 * sigma, 36).chosen_scale_or_clip
        return unit.scaled(c)

    if kind in ("mu_law", "a_law"):
        K = _require_levels(config)
        if K < 2:
            raise ValueError(f"{kind} requires K >= 2")
        sigma = _sigma_hat(config, calibration_data)
        c = float(params.get("clip", 4.0 * sigma))
        if kind == "mu_law":
            unit = _unit_mu_law_codebook(K, float(params.get("mu", MU_LAW_MU)))
        else:
            unit = _unit_a_law_codebook(K, float(params.get("A", A_LAW_A)))
        return unit.scaled(c)

    if kind == "nf4":
        K = config.K if config.K is not None else 16
        unit = _nf4_unit_codebook(K)
        if "scale" in params:
            s = float(params["scale"])
        else:
            data = _require_calibration(config, calibration_data)
            sigma = _sigma_hat(config, calibration_data)
            s = calibrate_scale(unit, data, 0.5 * sigma, 4.0 * sigma, 60).chosen_scale_or_clip
        return unit.scaled(s)

    if kind == "nvfp4":
        _check_fixed_k(config)
        unit = Codebook.from_levels(NVFP4_VALUES)
        if "scale" in params:
            s = float(params["scale"])
        else:
            data = _require_calibration(config, calibration_data)
            sigma = _sigma_hat(config, calibration_data)
            s = calibrate_scale(unit, data, 0.25 * sigma, 4.0 * sigma, 60).chosen_scale_or_clip
        return unit.scaled(s)

    if kind == "int8_symmetric":
        _check_fixed_k(config)
        return Codebook.from_levels(np.linspace(-1.0, 1.0, 256))

    if kind == "fp8_e4m3":
        _check_fixed_k(config)
        return Codebook.from_levels(float8_values(params.get("variant", "e4m3")))

    raise ValueError(f"unknown quantizer kind {kind!r}")
