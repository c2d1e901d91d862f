"""Numerical verification of the high-rate laws.

Checks, at finite K, the asymptotic statements the quantizer design rests
on: the sharp K^-2 constant for the Gaussian model, the closed-form optimal
rate split between the two operands, the unimodal-to-bimodal transition of
the optimal point density at rho^2 = 1/3, and the agreement between the
compander construction and the weighted Lloyd-Max oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gauss_model import BivariatePairSpec, normalizer_J, optimal_density_shape, weight_fn
from .quantizer_zoo import _unit_matmul_opt_codebook, lloyd_max_detailed, weighted_mse
from .gauss_model import STANDARD_TRUNCATION


@dataclass(frozen=True)
class ModeReport:
    """Stationary structure of the log optimal density l(u)."""

    stationary_points: tuple[float, ...]
    classification: tuple[str, ...]
    curvature_at_zero: float
    grid_maxima: tuple[float, ...]
    grid_step: float


@dataclass(frozen=True)
class ConstantCheck:
    """Monte-Carlo K^2 E[D^2] against the theoretical leading constant."""

    ratio: float
    ci95_halfwidth: float
    empirical_k2_d2: float
    theory_constant: float
    k: int
    n_pairs: int


def log_density_curvature(u, rho: float):
    """Second derivative of l(u) = -u^2/6 + (1/3) log((1-rho^2) + rho^2 u^2)."""
    r2 = rho * rho
    u2 = np.square(np.asarray(u, dtype=float))
    q = (1.0 - r2) + r2 * u2
    return -1.0 / 3.0 + (2.0 * r2 / 3.0) * ((1.0 - r2) - r2 * u2) / np.square(q)


def find_modes(rho: float, grid_step: float = 1e-4, grid_radius: float = 6.0) -> ModeReport:
    """Stationary points of the optimal density shape, with a grid cross-check.

    Analytically, u = 0 is always stationary with curvature
    (3 rho^2 - 1) / (3 (1 - rho^2)); nonzero stationary points
    +- sqrt(3 - 1/rho^2) exist exactly when rho^2 > 1/3 and are the two
    global maxima.  A dense scan of the density itself is returned alongside
    so the algebra never goes unchecked.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError(f"rho must lie strictly inside (-1, 1), got {rho}")
    r2 = rho * rho
    curv0 = (3.0 * r2 - 1.0) / (3.0 * (1.0 - r2))

    def classify(c: float) -> str:
        if abs(c) <= 1e-12:
            return "saddle-degenerate"
        return "max" if c < 0 else "min"

    points = [0.0]
    labels = [classify(curv0)]
    if r2 > 1.0 / 3.0:
        u_peak = math.sqrt(3.0 - 1.0 / r2)
        c_peak = float(log_density_curvature(u_peak, rho))
        points = [-u_peak, 0.0, u_peak]
        labels = [classify(c_peak), classify(curv0), classify(c_peak)]

    shape = optimal_density_shape(BivariatePairSpec(1.0, 1.0, rho))
    us = np.arange(0.0, grid_radius + grid_step / 2.0, grid_step)
    vals = shape(us)
    i_max = int(np.argmax(vals))
    u_grid = float(us[i_max])
    grid_maxima = (0.0,) if i_max == 0 else (-u_grid, u_grid)

    return ModeReport(
        stationary_points=tuple(points),
        classification=tuple(labels),
        curvature_at_zero=float(curv0),
        grid_maxima=grid_maxima,
        grid_step=grid_step,
    )


def optimal_bit_split(alpha_x: float, alpha_y: float, R: float) -> tuple[float, float]:
    """Rate split minimizing alpha_x 2^(-2 Rx) + alpha_y 2^(-2 Ry) at Rx + Ry = R.

    Closed form: Rx* = R/2 + (1/4) log2(alpha_x / alpha_y), equivalently
    K_x / K_y = (alpha_x / alpha_y)^(1/4).  Both rates must come out
    positive, otherwise the split is infeasible at this total rate.
    """
    if alpha_x <= 0 or alpha_y <= 0:
        raise ValueError("alpha_x and alpha_y must be positive")
    if R <= 0:
        raise ValueError(f"total rate R must be positive, got {R}")
    shift = 0.25 * math.log2(alpha_x / alpha_y)
    rx = R / 2.0 + shift
    ry = R - rx
    if rx <= 0 or ry <= 0:
        raise ValueError(
            f"infeasible split at R={R}: closed form gives R_X*={rx:.6g}, R_Y*={ry:.6g}; "
            "the total rate is too small for both rates to be positive"
        )
    return rx, ry


def highrate_constant_check(
    spec: BivariatePairSpec,
    K: int,
    n_pairs: int,
    seed: int = 0,
    batch_size: int = 2_000_000,
) -> ConstantCheck:
    """Monte-Carlo estimate of K^2 E[D^2] over the theory constant.

    Pairs are sampled directly from the bivariate model, quantized with the
    product-aware companders at the true sigmas, and the single-pair product
    error D = XY - XhatYhat accumulated in batches.  The theory constant is
    sigma_x^2 sigma_y^2 J(rho)^3 / (6 sqrt(2 pi)).
    """
    if K < 16:
        raise ValueError(f"K must be at least 16 for the high-rate check, got {K}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    cb_x = _unit_matmul_opt_codebook(spec.rho, K).scaled(spec.sigma_x)
    cb_y = _unit_matmul_opt_codebook(spec.rho, K).scaled(spec.sigma_y)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 0))))
    c = math.sqrt(1.0 - spec.rho**2)
    total = 0
    s2 = 0.0
    s4 = 0.0
    while total < n_pairs:
        nb = min(batch_size, n_pairs - total)
        z1 = rng.standard_normal(nb)
        z2 = rng.standard_normal(nb)
        x = spec.sigma_x * z1
        y = spec.sigma_y * (spec.rho * z1 + c * z2)
        d = x * y - cb_x.quantize(x) * cb_y.quantize(y)
        d2 = np.square(d)
        s2 += float(d2.sum())
        s4 += float(np.square(d2).sum())
        total += nb
    mean_d2 = s2 / total
    var_d2 = max(s4 / total - mean_d2**2, 0.0)
    theory = spec.sigma_x**2 * spec.sigma_y**2 * normalizer_J(spec.rho) ** 3 / (6.0 * math.sqrt(2.0 * math.pi))
    k2 = float(K) ** 2
    ratio = k2 * mean_d2 / theory
    ci = k2 * 1.96 * math.sqrt(var_d2 / total) / theory
    return ConstantCheck(
        ratio=ratio,
        ci95_halfwidth=ci,
        empirical_k2_d2=k2 * mean_d2,
        theory_constant=theory,
        k=K,
        n_pairs=total,
    )


def compander_vs_oracle(spec: BivariatePairSpec, K: int) -> tuple[float, float, float]:
    """Weighted MSE of the optimal compander vs the weighted Lloyd-Max oracle.

    Both are evaluated by quadrature against h = f_X * w_X.  The ratio
    compander/oracle is >= 1 at finite K (the oracle is locally optimal) and
    tends to 1 as K grows.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    s = spec.sigma_x
    radius = STANDARD_TRUNCATION * s

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-np.square(x) / (2.0 * s * s)) / (math.sqrt(2.0 * math.pi) * s)

    def w(x):
        return weight_fn(x, spec, "X")

    def h(x):
        return f(x) * w(x)

    cb = _unit_matmul_opt_codebook(spec.rho, K).scaled(s)
    compander_wmse = weighted_mse(cb, h, radius)
    oracle = lloyd_max_detailed(K, f, w, support_radius=radius)
    lloydmax_wmse = weighted_mse(oracle.codebook, h, radius)
    return compander_wmse, lloydmax_wmse, compander_wmse / lloydmax_wmse
