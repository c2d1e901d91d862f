"""Matrix benchmark: sampling model, error metrics, and asymptotic behavior.

The bias-order check uses a deterministic quadrature oracle for E[D]; Monte
Carlo cannot resolve an O(K^-2) mean at K = 256 with any affordable sample
size, so sampling only corroborates the small-K values and the noise-guard
inequality.
"""

import math

import numpy as np
import pytest

from mmquant.gauss_model import BivariatePairSpec
from mmquant.matmul_bench import (
    SynthExperimentConfig,
    decoupled_weighted_error,
    matmul_errors,
    quantize_matrix,
    run_synth_experiment,
    sample_pair_correlated_matrices,
    trial_rng,
)
from mmquant.quantizer_zoo import NVFP4_VALUES, QuantizerConfig, _unit_matmul_opt_codebook, build_quantizer
from mmquant.compander import Codebook


class TestSampling:
    def test_rho_zero_independence(self):
        cfg = SynthExperimentConfig(m=64, k=64, n=64, spec=BivariatePairSpec(1, 1, 0.0), trials=1, rng_seed=1)
        A, B = sample_pair_correlated_matrices(cfg, 0)
        # with no shared factor the sample correlation is O(1/sqrt(mk))
        r = np.corrcoef(A[:, :64].ravel(), B.T[:, :64].ravel())[0, 1]
        assert abs(r) < 4.0 / math.sqrt(A.size)

    def test_pair_correlation_monte_carlo(self):
        """corr(A_1l, B_l1) = rho within 3/sqrt(k) at k = 1e6."""
        k = 1_000_000
        cfg = SynthExperimentConfig(m=1, k=k, n=1, spec=BivariatePairSpec(1, 1, 0.6), trials=1, rng_seed=7)
        A, B = sample_pair_correlated_matrices(cfg, 0)
        r = np.corrcoef(A.ravel(), B.ravel())[0, 1]
        assert abs(r - 0.6) < 3.0 / math.sqrt(k)

    def test_negative_rho(self):
        k = 500_000
        cfg = SynthExperimentConfig(m=1, k=k, n=1, spec=BivariatePairSpec(1, 1, -0.8), trials=1, rng_seed=8)
        A, B = sample_pair_correlated_matrices(cfg, 0)
        r = np.corrcoef(A.ravel(), B.ravel())[0, 1]
        assert abs(r + 0.8) < 3.0 / math.sqrt(k)

    def test_marginal_variances(self):
        # entries within a column of A share the column factor, so the
        # variance estimator fluctuates at the k-scale: std ~ sigma^2
        # (|rho| sqrt(2/k) + sqrt(2/(mk)))
        cfg = SynthExperimentConfig(
            m=256, k=512, n=8, spec=BivariatePairSpec(1.5, 0.5, 0.4), trials=1, rng_seed=3
        )
        A, B = sample_pair_correlated_matrices(cfg, 0)
        bound_a = 4.0 * 1.5**2 * (0.4 * math.sqrt(2.0 / cfg.k) + math.sqrt(2.0 / A.size))
        bound_b = 4.0 * 0.5**2 * (0.4 * math.sqrt(2.0 / cfg.k) + math.sqrt(2.0 / B.size))
        assert abs(A.var() - 1.5**2) < bound_a
        assert abs(B.var() - 0.5**2) < bound_b

    def test_trial_keyed_reproducibility(self):
        cfg = SynthExperimentConfig(m=8, k=8, n=8, trials=1, rng_seed=42)
        A1, B1 = sample_pair_correlated_matrices(cfg, 5)
        A2, B2 = sample_pair_correlated_matrices(cfg, 5)
        np.testing.assert_array_equal(A1, A2)
        np.testing.assert_array_equal(B1, B2)
        A3, _ = sample_pair_correlated_matrices(cfg, 6)
        assert not np.array_equal(A1, A3)

    def test_trial_rng_is_order_independent(self):
        a = trial_rng(1, 3).standard_normal(4)
        _ = trial_rng(1, 9).standard_normal(100)
        b = trial_rng(1, 3).standard_normal(4)
        np.testing.assert_array_equal(a, b)


class TestQuantizeMatrix:
    def test_zero_matrix_right_tie(self):
        cb = Codebook.from_levels([-2.0, 2.0])
        M = np.zeros((3, 4))
        np.testing.assert_array_equal(quantize_matrix(cb, M), np.full((3, 4), 2.0))

    def test_idempotence(self):
        cb = Codebook.from_levels([-1.0, 0.0, 2.0])
        M = np.array([[0.6, -3.0], [1.1, 0.0]])
        Q = quantize_matrix(cb, M)
        np.testing.assert_array_equal(quantize_matrix(cb, Q), Q)

    def test_nvfp4_example_matrix(self):
        cb = Codebook.from_levels(NVFP4_VALUES)
        M = np.array([[0.2, 2.4], [-5.1, 7.0]])
        np.testing.assert_array_equal(quantize_matrix(cb, M), [[0.0, 2.0], [-6.0, 6.0]])


class TestMatmulErrors:
    def test_exact_inputs_zero_error(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 5))
        B = rng.standard_normal((5, 3))
        rep = matmul_errors(A, B, A, B)
        assert rep.rel_frobenius == 0.0
        assert rep.mse_frobenius == 0.0
        assert rep.per_pair_d2 == 0.0

    def test_bilinear_perturbation(self):
        """With B unperturbed, the product error is exactly ||E B||_F."""
        rng = np.random.default_rng(1)
        A = rng.standard_normal((6, 7))
        B = rng.standard_normal((7, 4))
        E = 0.01 * rng.standard_normal(A.shape)
        rep = matmul_errors(A, B, A + E, B)
        assert math.sqrt(rep.mse_frobenius) == pytest.approx(np.linalg.norm(E @ B), rel=1e-10)

    def test_scalar_case_hand_arithmetic(self):
        rep = matmul_errors(np.array([[2.0]]), np.array([[3.0]]), np.array([[1.9]]), np.array([[3.1]]))
        assert math.sqrt(rep.mse_frobenius) == pytest.approx(0.11, rel=1e-12)
        assert rep.per_pair_d == pytest.approx(0.11, rel=1e-12)

    def test_zero_product_flagged(self):
        A = np.zeros((2, 2))
        B = np.zeros((2, 2))
        rep = matmul_errors(A, B, A + 1.0, B)
        assert rep.zero_product
        assert math.isnan(rep.rel_frobenius)

    def test_factorized_path_matches_materialized(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((5, 6))
        B = rng.standard_normal((6, 4))
        Ah = A + 0.05 * rng.standard_normal(A.shape)
        Bh = B + 0.05 * rng.standard_normal(B.shape)
        dense = matmul_errors(A, B, Ah, Bh)
        fact = matmul_errors(A, B, Ah, Bh, materialize_limit=0)
        assert fact.per_pair_d2 == pytest.approx(dense.per_pair_d2, rel=1e-12)
        assert fact.per_pair_d == pytest.approx(dense.per_pair_d, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul_errors(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((2, 3)), np.zeros((4, 2)))


class TestRunSynthExperiment:
    def test_high_rate_sanity(self):
        """K = 4096 surrogate: every K-parameterized method lands below 1e-2.

        Fixed-codebook kinds (nvfp4 etc.) have no high-rate surrogate and are
        excluded by construction.
        """
        cfg = SynthExperimentConfig(
            m=32,
            k=64,
            n=32,
            spec=BivariatePairSpec(1, 1, 0.6),
            trials=1,
            k_x=4096,
            k_y=4096,
            quantizers=("matmul_opt", "gaussian_compander", "uniform_clipped", "mu_law", "a_law", "nf4"),
            rng_seed=1,
        )
        for row in run_synth_experiment(cfg):
            assert row.mean_rel_frob < 1e-2, row

    def test_rho_zero_coincidence(self):
        """matmul_opt and gaussian_compander are the same construction at rho=0."""
        cfg = SynthExperimentConfig(
            m=32, k=64, n=32, trials=3, quantizers=("matmul_opt", "gaussian_compander"), rng_seed=2
        )
        rows = run_synth_experiment(cfg)
        assert rows[0].mean_rel_frob == rows[1].mean_rel_frob

    def test_benchmark_defaults(self):
        cfg = SynthExperimentConfig()
        assert (cfg.m, cfg.k, cfg.n, cfg.trials) == (128, 256, 128, 500)

    def test_per_kind_parameter_overrides(self):
        cfg = SynthExperimentConfig(
            m=16,
            k=32,
            n=16,
            spec=BivariatePairSpec(1, 1, 0.5),
            trials=1,
            k_x=8,
            k_y=8,
            quantizers=("nf4",),
            rng_seed=4,
            quantizer_params={"nf4": {"K": 4}},
        )
        base = run_synth_experiment(
            SynthExperimentConfig(
                m=16, k=32, n=16, spec=BivariatePairSpec(1, 1, 0.5), trials=1, k_x=8, k_y=8,
                quantizers=("nf4",), rng_seed=4,
            )
        )[0]
        overridden = run_synth_experiment(cfg)[0]
        assert overridden.mean_rel_frob > base.mean_rel_frob  # 4-level NF is coarser than 8-level

    def test_threaded_equals_sequential(self):
        cfg = SynthExperimentConfig(
            m=16, k=32, n=16, trials=4, quantizers=("matmul_opt",), spec=BivariatePairSpec(1, 1, 0.5), rng_seed=5
        )
        seq = run_synth_experiment(cfg, threads=1)
        par = run_synth_experiment(cfg, threads=4)
        assert seq[0].mean_rel_frob == par[0].mean_rel_frob


class TestDecoupling:
    def test_weighted_error_identity_at_k128(self):
        """E[D^2] equals E[w_X e_X^2] + E[w_Y e_Y^2] within 3 CI half-widths."""
        spec = BivariatePairSpec(1, 1, 0.6)
        d2, dec = [], []
        for t in range(12):
            cfg = SynthExperimentConfig(m=64, k=128, n=64, spec=spec, trials=1, k_x=128, k_y=128, rng_seed=17)
            A, B = sample_pair_correlated_matrices(cfg, t)
            cb_a = build_quantizer(QuantizerConfig("matmul_opt", 128, {"rho": 0.6}), A)
            cb_b = build_quantizer(QuantizerConfig("matmul_opt", 128, {"rho": 0.6}), B)
            rep = matmul_errors(A, B, quantize_matrix(cb_a, A), quantize_matrix(cb_b, B))
            d2.append(rep.per_pair_d2)
            dec.append(decoupled_weighted_error(A, B, quantize_matrix(cb_a, A), quantize_matrix(cb_b, B), spec))
        d2 = np.asarray(d2)
        dec = np.asarray(dec)
        ci = 1.96 * d2.std(ddof=1) / math.sqrt(d2.size)
        assert abs(d2.mean() - dec.mean()) <= 3.0 * ci


# ---------------------------------------------------------------------------
# Bias order: E[D] = O(K^-2)
# ---------------------------------------------------------------------------


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _cell_nodes(cb, radius, p=8):
    """Simpson nodes, weights, and cell-aligned errors x - r_cell.

    Cells share edge nodes, so the error must use each row's own level
    rather than nearest-neighbor quantization (which would assign shared
    edges to one side only).
    """
    lo = np.clip(cb.boundaries[:-1], -radius, radius)
    hi = np.clip(cb.boundaries[1:], -radius, radius)
    n = 2 * p + 1
    t = np.linspace(0, 1, n)
    x = lo[:, None] + (hi - lo)[:, None] * t
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    wq = ((hi - lo) / (6.0 * p))[:, None] * w
    ex = x - cb.levels[:, None]
    return x.ravel(), wq.ravel(), ex.ravel()


def _mean_d_quadrature(rho: float, K: int) -> float:
    """Deterministic E[D] for the optimal compander pair at unit sigmas.

    E[D] = 2 rho E[X e_X] - E[e_X e_Y]; the cross term integrates e_Y against
    the conditional normal of Y given X, cell pair by cell pair.
    """
    cb = _unit_matmul_opt_codebook(rho, K)
    xf, wxf, exf = _cell_nodes(cb, 10.0)
    e_mu = float(np.sum(wxf * _phi(xf) * rho * xf * exf))
    sc = math.sqrt(1.0 - rho * rho)
    hc = np.empty_like(xf)
    for lo in range(0, xf.size, 2048):
        sl = slice(lo, lo + 2048)
        cond = _phi((xf[None, :] - rho * xf[sl, None]) / sc) / sc
        hc[sl] = cond @ (exf * wxf)
    e_cross = float(np.sum(wxf * _phi(xf) * exf * hc))
    return 2.0 * e_mu - e_cross


class TestBiasOrder:
    def test_exponent_from_quadrature(self):
        """|E[D]| decays like K^-2: fitted exponent within [1.7, 2.3]."""
        ks = [16, 64, 256]
        eds = [abs(_mean_d_quadrature(0.6, K)) for K in ks]
        slope = -np.polyfit(np.log(ks), np.log(eds), 1)[0]
        assert 1.7 <= slope <= 2.3

    def test_monte_carlo_inequality(self):
        """Empirical |E[D]| stays below the noise guard plus c/K^2."""
        rng = np.random.default_rng(99)
        n = 2_000_000
        c = 2.0
        for K in (16, 64, 256):
            cb = _unit_matmul_opt_codebook(0.6, K)
            z1 = rng.standard_normal(n)
            z2 = rng.standard_normal(n)
            x = z1
            y = 0.6 * z1 + math.sqrt(1 - 0.36) * z2
            d = x * y - cb.quantize(x) * cb.quantize(y)
            bound = 5.0 * math.sqrt(float(np.mean(d * d)) / n) + c / K**2
            assert abs(float(d.mean())) <= bound

    def test_monte_carlo_matches_quadrature_at_low_k(self):
        rng = np.random.default_rng(100)
        n = 4_000_000
        K = 16
        cb = _unit_matmul_opt_codebook(0.6, K)
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        x = z1
        y = 0.6 * z1 + math.sqrt(1 - 0.36) * z2
        d = x * y - cb.quantize(x) * cb.quantize(y)
        mc = float(d.mean())
        noise = 3.0 * float(d.std()) / math.sqrt(n)
        assert abs(mc - _mean_d_quadrature(0.6, K)) <= noise


class TestLeadingTermRatio:
    def test_matmul_opt_mse_approaches_theory(self):
        """mnk-scaled empirical MSE over the theory leading term is ~1 at K=256."""
        spec = BivariatePairSpec(1, 1, 0.6)
        cfg = SynthExperimentConfig(
            m=64, k=128, n=64, spec=spec, trials=8, k_x=256, k_y=256, quantizers=("matmul_opt",), rng_seed=31
        )
        row = run_synth_experiment(cfg)[0]
        assert 0.9 <= row.mean_mse / row.theory_leading <= 1.1
