"""Acceptance gate: every criterion at its stated tolerance.

Run with ``pytest -s tests/test_acceptance.py`` to see one PASS/FAIL line per
criterion including its wall-clock time.  Criteria are numbered 1-10; the
two extractor criteria (11, 12) live in the extractor package's test suite.
"""

import math
import time

import numpy as np

from mmquant.compander import Codebook, build_compander_codebook, tabulate_cdf
from mmquant.gauss_model import BivariatePairSpec, normalizer_J, optimal_density_shape, weight_fn
from mmquant.highrate_verify import compander_vs_oracle, find_modes, highrate_constant_check, optimal_bit_split
from mmquant.lsq_bench import LsqConfig, run_scheme
from mmquant.matmul_bench import (
    SynthExperimentConfig,
    decoupled_weighted_error,
    matmul_errors,
    quantize_matrix,
    run_synth_experiment,
    sample_pair_correlated_matrices,
)
from mmquant.quadrature import adaptive_simpson
from mmquant.quantizer_zoo import QuantizerConfig, build_quantizer, weighted_mse


def _report(num: int, name: str, ok: bool, detail: str, started: float) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num:2d}: {name} — {detail} ({time.perf_counter() - started:.1f}s)")
    assert ok, f"criterion {num}: {name}: {detail}"


def test_criterion_01_normalizer_exactness():
    """J(0) = sqrt(6 pi) within 1e-8."""
    t0 = time.perf_counter()
    err = abs(normalizer_J(0.0) - math.sqrt(6.0 * math.pi))
    _report(1, "normalizer exactness", err <= 1e-8, f"|J(0) - sqrt(6 pi)| = {err:.2e}", t0)


def test_criterion_02_classical_constant_recovery():
    """Theory constant equals sqrt(3) pi within 1e-8; MC K^2 E[D^2] within 5%."""
    t0 = time.perf_counter()
    theory = normalizer_J(0.0) ** 3 / (6.0 * math.sqrt(2.0 * math.pi))
    exact_err = abs(theory - math.sqrt(3.0) * math.pi)
    chk = highrate_constant_check(BivariatePairSpec(1.0, 1.0, 0.0), 256, 10_000_000, seed=12345)
    ok = exact_err <= 1e-8 and abs(chk.ratio - 1.0) <= 0.05
    _report(
        2,
        "classical constant recovery",
        ok,
        f"analytic err {exact_err:.2e}; MC ratio {chk.ratio:.4f} +- {chk.ci95_halfwidth:.4f} at 1e7 pairs",
        t0,
    )


def test_criterion_03_phase_transition():
    """Peak locations match +-sqrt(3 - 1/rho^2) within 2e-4; curvature flips at rho^2 = 1/3."""
    t0 = time.perf_counter()
    ok = True
    details = []
    for rho in (0.62, 0.7, 0.8, 0.9):
        report = find_modes(rho, grid_step=1e-4)
        formula = math.sqrt(3.0 - 1.0 / rho**2)
        dev = abs(max(report.grid_maxima) - formula)
        ok &= dev <= 2e-4
        details.append(f"rho={rho}: dev {dev:.1e}")
    for rho in (0.1, 0.3, 0.5):
        report = find_modes(rho, grid_step=1e-4)
        ok &= report.grid_maxima == (0.0,) and report.stationary_points == (0.0,)
    crit = 1.0 / math.sqrt(3.0)
    for rho in np.linspace(0.05, 0.95, 31):
        if abs(rho - crit) < 1e-3:
            continue
        c = find_modes(float(rho)).curvature_at_zero
        ok &= math.copysign(1.0, c) == math.copysign(1.0, 3 * rho**2 - 1)
    _report(3, "phase transition", ok, "; ".join(details), t0)


def test_criterion_04_oracle_equivalence():
    """Compander-to-weighted-Lloyd-Max ratio in [0.95, 1.05] at K=256."""
    t0 = time.perf_counter()
    ok = True
    details = []
    for rho in (0.0, 0.6, 0.9):
        _, _, ratio = compander_vs_oracle(BivariatePairSpec(1.0, 1.0, rho), 256)
        ok &= 0.95 <= ratio <= 1.05
        details.append(f"rho={rho}: {ratio:.4f}")
    _report(4, "oracle equivalence", ok, "; ".join(details), t0)


def test_criterion_05_bennett_law():
    """wMSE exponent -2 +- 0.1 over K in {32..512}; K=512 within 3% of the Bennett integral."""
    t0 = time.perf_counter()
    spec = BivariatePairSpec(1.0, 1.0, 0.6)
    shape = optimal_density_shape(spec)
    pd = tabulate_cdf(shape)
    norm = normalizer_J(0.6)

    def h(x):
        x = np.asarray(x, dtype=float)
        f = np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)
        return f * weight_fn(x, spec, "X")

    def bennett_integrand(x: float) -> float:
        lam = float(shape(np.asarray(x))) / norm
        return float(h(np.asarray(x))) / lam**2

    target = adaptive_simpson(bennett_integrand, -12.0, 12.0, tol=1e-9) / 12.0
    ks = np.array([32, 64, 128, 256, 512])
    wmses = np.array([weighted_mse(build_compander_codebook(pd, int(K)), h, 12.0) for K in ks])
    slope = np.polyfit(np.log(ks), np.log(wmses), 1)[0]
    final_ratio = ks[-1] ** 2 * wmses[-1] / target
    ok = abs(slope + 2.0) <= 0.1 and abs(final_ratio - 1.0) <= 0.03
    _report(5, "Bennett law", ok, f"exponent {slope:.3f}; K=512 ratio {final_ratio:.4f}", t0)


def test_criterion_06_bit_split():
    """Integer enumeration at R=10 confirms the closed-form minimizer."""
    t0 = time.perf_counter()
    R = 10
    ok = True
    details = []
    for ratio in (1.0, 4.0, 16.0):
        rx_star, _ = optimal_bit_split(ratio, 1.0, float(R))
        leading = {rx: ratio * 2.0 ** (-2 * rx) + 2.0 ** (-2 * (R - rx)) for rx in range(1, R)}
        best = min(leading.values())
        argmins = [rx for rx, v in leading.items() if abs(v - best) <= 1e-12 * best]
        ok &= all(abs(rx - rx_star) <= 0.5 + 1e-12 for rx in argmins)
        details.append(f"ratio {ratio:g}: Rx*={rx_star:.2f} argmin {argmins}")
    _report(6, "bit split", ok, "; ".join(details), t0)


def test_criterion_07_synth_matmul_ordering():
    """Fig.-2-style ordering: matmul_opt <= gaussian everywhere, strictly at rho=0.9,
    and matmul_opt <= every baseline at rho=0.9 (100 trials, K=16)."""
    t0 = time.perf_counter()
    results = {}
    for rho in (0.0, 0.3, 0.6, 0.9):
        cfg = SynthExperimentConfig(
            m=128,
            k=256,
            n=128,
            spec=BivariatePairSpec(1.0, 1.0, rho),
            trials=100,
            k_x=16,
            k_y=16,
            rng_seed=20_240_601,
        )
        results[rho] = {r.quantizer: r for r in run_synth_experiment(cfg)}
    ok = True
    details = []
    for rho, rows in results.items():
        mo = rows["matmul_opt"]
        gc = rows["gaussian_compander"]
        ok &= mo.mean_rel_frob <= gc.mean_rel_frob + 1e-15
        details.append(f"rho={rho}: opt {mo.mean_rel_frob:.4f} vs gauss {gc.mean_rel_frob:.4f}")
    mo9 = results[0.9]["matmul_opt"]
    gc9 = results[0.9]["gaussian_compander"]
    margin = gc9.mean_rel_frob - mo9.mean_rel_frob
    ok &= margin > 2.0 * max(mo9.ci95, gc9.ci95)
    for name, row in results[0.9].items():
        ok &= mo9.mean_rel_frob <= row.mean_rel_frob + 1e-15
    _report(
        7,
        "synthetic matmul ordering",
        ok,
        "; ".join(details) + f"; rho=0.9 margin {margin:.4f} vs 2ci {2*max(mo9.ci95, gc9.ci95):.4f}",
        t0,
    )


def test_criterion_08_decoupling_identity():
    """E[D^2] matches E[w_X e_X^2] + E[w_Y e_Y^2] within 3 CI half-widths (K=128, rho=0.6)."""
    t0 = time.perf_counter()
    spec = BivariatePairSpec(1.0, 1.0, 0.6)
    cfg = SynthExperimentConfig(m=64, k=128, n=64, spec=spec, trials=1, k_x=128, k_y=128, rng_seed=77)
    d2, dec = [], []
    for t in range(20):
        A, B = sample_pair_correlated_matrices(cfg, t)
        cb_a = build_quantizer(QuantizerConfig("matmul_opt", 128, {"rho": 0.6}), A)
        cb_b = build_quantizer(QuantizerConfig("matmul_opt", 128, {"rho": 0.6}), B)
        A_hat, B_hat = quantize_matrix(cb_a, A), quantize_matrix(cb_b, B)
        d2.append(matmul_errors(A, B, A_hat, B_hat, materialize_limit=0).per_pair_d2)
        dec.append(decoupled_weighted_error(A, B, A_hat, B_hat, spec))
    d2 = np.asarray(d2)
    dec = np.asarray(dec)
    ci = 1.96 * d2.std(ddof=1) / math.sqrt(d2.size)
    gap = abs(d2.mean() - dec.mean())
    _report(8, "decoupling identity", gap <= 3.0 * ci, f"gap {gap:.2e} vs 3ci {3*ci:.2e}", t0)


def test_criterion_09_lsq_dominance():
    """Scheme 2 <= scheme 1 on every trial (0 in the sweep grid), deterministically."""
    t0 = time.perf_counter()
    cfg = LsqConfig(n=512, d=32, m=8, bits=4, noise_eps=0.01, trials=8, seed=9)
    assert 0.0 in cfg.rho_sweep_grid.tolist()
    ok = True
    for trial in range(cfg.trials):
        e1 = run_scheme("gaussian_marginal", cfg, trial).error
        e2 = run_scheme("rho_sweep", cfg, trial).error
        ok &= e2 <= e1
    r1 = run_scheme("rho_sweep", cfg, 0)
    r2 = run_scheme("rho_sweep", cfg, 0)
    ok &= (r1.error, r1.chosen_rho) == (r2.error, r2.chosen_rho)
    _report(9, "LSQ scheme dominance", ok, f"{cfg.trials} trials, exact argmin + determinism", t0)


def test_criterion_10_property_suites():
    """Monotonicity, midpoint, idempotence, scale equivariance on >= 1e4 random cases."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(31337)
    cases = 0
    ok = True
    for _ in range(100):
        k = int(rng.integers(1, 65))
        levels = np.unique(rng.standard_normal(k) * rng.uniform(0.5, 3.0))
        if levels.size < 1:
            continue
        cb = Codebook.from_levels(levels)
        # monotonicity of levels and boundaries
        ok &= bool(np.all(np.diff(cb.levels) > 0))
        interior = cb.boundaries[1:-1]
        ok &= interior.size == 0 or bool(np.all(np.diff(interior) > 0))
        # midpoint property
        ok &= bool(np.allclose(interior, 0.5 * (cb.levels[:-1] + cb.levels[1:]), atol=1e-15))
        x = rng.standard_normal(120) * 2.5
        q = cb.quantize(x)
        ok &= bool(np.array_equal(cb.quantize(q), q))
        s = float(2.0 ** rng.integers(-4, 5))
        ok &= bool(np.array_equal(cb.scaled(s).quantize(s * x), s * q))
        cases += 2 * x.size + cb.size
    _report(10, "property suites", ok and cases >= 10_000, f"{cases} randomized cases", t0)
