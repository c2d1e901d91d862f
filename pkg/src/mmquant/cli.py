"""Command-line entry point for all experiments.

Subcommands: ``density``, ``synth-matmul``, ``highrate``, ``lsq``,
``activations``.  Experiment parameters come from a flat key-value config
file (``section.key = value``, ``#`` comments); every run writes CSV outputs
plus a ``manifest.json`` echoing the configuration and seed, so re-running a
manifest reproduces the outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .activation_eval import (
    DumpFormatError,
    evaluate_head,
    pair_splits,
    read_activation_dump,
    read_sidecar,
    win_rate_table,
)
from .compander import build_compander_codebook, tabulate_cdf
from .gauss_model import BivariatePairSpec, normalizer_J, optimal_density_shape
from .highrate_verify import find_modes, highrate_constant_check
from .lsq_bench import SCHEMES, LsqConfig, default_sweep_grid, run_scheme
from .matmul_bench import DEFAULT_QUANTIZERS, SynthExperimentConfig, run_synth_experiment
from .quadrature import QuadratureError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_REQUIRED = object()


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


@dataclass
class RunManifest:
    """Everything needed to reproduce a run's outputs bit-exactly."""

    subcommand: str
    config: dict
    seed: int
    version: str
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="ascii")
        return path


def parse_config(path) -> dict[str, str]:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    cfg: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        cfg[key] = value
    return cfg


def cfg_get(cfg: dict[str, str], key: str, cast, default=_REQUIRED):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        if cast is bool:
            return cfg[key].strip().lower() in ("1", "true", "yes", "on")
        return cast(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r} has invalid value {cfg[key]!r}: {exc}") from exc


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def fmt(value) -> str:
    """Locale-independent numeric formatting with 17 significant digits."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_density(args, cfg: dict[str, str], out_dir: Path, manifest: RunManifest) -> None:
    rho = args.rho
    sigma = args.sigma
    levels = args.levels
    if not -1.0 < rho < 1.0:
        raise ConfigError(f"--rho must lie strictly inside (-1, 1), got {rho}")
    if sigma <= 0:
        raise ConfigError(f"--sigma must be positive, got {sigma}")
    if levels < 1:
        raise ConfigError(f"--levels must be at least 1, got {levels}")
    spec = BivariatePairSpec(sigma, sigma, rho)
    shape = optimal_density_shape(spec)
    norm = normalizer_J(rho)
    us = np.linspace(-6.0, 6.0, 2001)
    lam = shape(us) / norm
    lambda_path = out_dir / "lambda.csv"
    write_csv(lambda_path, ["u", "lambda_star(u)"], zip(us.tolist(), lam.tolist()))

    cb = build_compander_codebook(tabulate_cdf(shape), levels).scaled(sigma)
    codebook_path = out_dir / "codebook.csv"
    cb.to_csv(codebook_path)
    manifest.outputs += [lambda_path.name, codebook_path.name]


def _quantizer_params(cfg: dict[str, str]) -> dict:
    """Kind-specific quantizer overrides: ``quantizer.<kind>.<param> = value``.

    Values parse as int, then float, then raw string (e.g.
    ``quantizer.mu_law.mu = 100``, ``quantizer.fp8_e4m3.variant = e5m2``,
    ``quantizer.nf4.K = 8``).
    """
    out: dict[str, dict] = {}
    for key, raw in cfg.items():
        if not key.startswith("quantizer."):
            continue
        parts = key.split(".")
        if len(parts) != 3:
            raise ConfigError(f"expected quantizer.<kind>.<param>, got {key!r}")
        _, kind, param = parts
        value: object
        for cast in (int, float):
            try:
                value = cast(raw)
                break
            except ValueError:
                value = raw
        out.setdefault(kind, {})[param] = value
    return out


def cmd_synth(args, cfg: dict[str, str], out_dir: Path, manifest: RunManifest) -> None:
    rhos = cfg_get(cfg, "synth.rhos", _float_list, [0.0, 0.3, 0.6, 0.9])
    quantizers = tuple(cfg_get(cfg, "synth.quantizers", _str_list, list(DEFAULT_QUANTIZERS)))
    sigma_x = cfg_get(cfg, "synth.sigma_x", float, 1.0)
    sigma_y = cfg_get(cfg, "synth.sigma_y", float, 1.0)
    quantizer_params = _quantizer_params(cfg)
    rows = []
    for rho in rhos:
        exp_cfg = SynthExperimentConfig(
            m=cfg_get(cfg, "synth.m", int, 128),
            k=cfg_get(cfg, "synth.k", int, 256),
            n=cfg_get(cfg, "synth.n", int, 128),
            spec=BivariatePairSpec(sigma_x, sigma_y, rho),
            trials=cfg_get(cfg, "synth.trials", int, 500),
            k_x=cfg_get(cfg, "synth.kx", int, 16),
            k_y=cfg_get(cfg, "synth.ky", int, 16),
            quantizers=quantizers,
            rng_seed=manifest.seed,
            quantizer_params=quantizer_params,
        )
        for r in run_synth_experiment(exp_cfg, threads=args.threads):
            rows.append(
                (r.quantizer, r.rho, r.k_x, r.k_y, r.mean_rel_frob, r.ci95, r.mean_mse, r.theory_leading)
            )
    path = out_dir / "synth.csv"
    write_csv(
        path,
        ["quantizer", "rho", "K_X", "K_Y", "mean_rel_frob", "ci95", "mean_mse", "theory_leading"],
        rows,
    )
    manifest.outputs.append(path.name)


def cmd_highrate(args, cfg: dict[str, str], out_dir: Path, manifest: RunManifest) -> None:
    mode_rhos = cfg_get(cfg, "highrate.rhos", _float_list, [0.0, 0.3, 0.5, 0.62, 0.7, 0.8, 0.9])
    ks = cfg_get(cfg, "highrate.ks", lambda s: [int(t) for t in s.split(",") if t.strip()], [64, 128, 256])
    n_pairs = cfg_get(cfg, "highrate.n_pairs", int, 2_000_000)
    rho_const = cfg_get(cfg, "highrate.rho", float, 0.6)
    sigma_x = cfg_get(cfg, "highrate.sigma_x", float, 1.0)
    sigma_y = cfg_get(cfg, "highrate.sigma_y", float, 1.0)

    mode_rows = []
    for rho in mode_rhos:
        report = find_modes(rho)
        peak_formula = max(report.stationary_points)
        peak_grid = max(report.grid_maxima)
        mode_rows.append((rho, report.curvature_at_zero, peak_formula, peak_grid))
    modes_path = out_dir / "modes.csv"
    write_csv(modes_path, ["rho", "curvature0", "peak_formula", "peak_gridsearch"], mode_rows)

    const_rows = []
    spec = BivariatePairSpec(sigma_x, sigma_y, rho_const)
    for K in ks:
        chk = highrate_constant_check(spec, K, n_pairs, seed=manifest.seed)
        const_rows.append((K, chk.ratio, chk.ci95_halfwidth))
    const_path = out_dir / "constant.csv"
    write_csv(const_path, ["K", "ratio", "ci95"], const_rows)
    manifest.outputs += [modes_path.name, const_path.name]


def cmd_lsq(args, cfg: dict[str, str], out_dir: Path, manifest: RunManifest) -> None:
    bits_list = cfg_get(cfg, "lsq.bits_list", lambda s: [int(t) for t in s.split(",") if t.strip()], [3, 4, 6, 8])
    trials = cfg_get(cfg, "lsq.trials", int, 10)
    sweep = default_sweep_grid(
        cfg_get(cfg, "lsq.sweep_points", int, 21), cfg_get(cfg, "lsq.sweep_limit", float, 0.95)
    )
    rows = []
    for bits in bits_list:
        lsq_cfg = LsqConfig(
            n=cfg_get(cfg, "lsq.n", int, 1024),
            d=cfg_get(cfg, "lsq.d", int, 64),
            m=cfg_get(cfg, "lsq.m", int, 16),
            spec=BivariatePairSpec(
                cfg_get(cfg, "lsq.sigma_x", float, 1.0),
                cfg_get(cfg, "lsq.sigma_y", float, 1.0),
                cfg_get(cfg, "lsq.rho", float, 0.6),
            ),
            noise_eps=cfg_get(cfg, "lsq.noise_eps", float, 0.01),
            bits=bits,
            subsample_rows=cfg_get(cfg, "lsq.subsample_rows", int, None),
            rho_sweep_grid=sweep,
            trials=trials,
            seed=manifest.seed,
        )
        for scheme in SCHEMES:
            results = [run_scheme(scheme, lsq_cfg, trial) for trial in range(trials)]
            errs = np.array([r.error for r in results])
            chosen = np.array([r.chosen_rho for r in results])
            ci = 1.96 * float(errs.std(ddof=1)) / math.sqrt(trials) if trials > 1 else math.nan
            rows.append((scheme, bits, float(chosen.mean()), float(errs.mean()), ci))
    path = out_dir / "lsq.csv"
    write_csv(path, ["scheme", "bits", "chosen_rho", "err_frob", "ci95"], rows)
    manifest.outputs.append(path.name)


def cmd_activations(args, cfg: dict[str, str], out_dir: Path, manifest: RunManifest) -> None:
    dump_path = cfg_get(cfg, "activations.dump", str)
    if not Path(dump_path).exists():
        raise FileNotFoundError(f"activation dump not found: {dump_path}")
    meta = read_sidecar(dump_path)
    rope_model = meta.get("rope_model", "false").lower() == "true"
    post_rope = meta.get("post_rope", "true").lower() == "true"
    allow_pre_rope = cfg_get(cfg, "activations.allow_pre_rope", bool, False)
    if rope_model and not post_rope and not allow_pre_rope:
        raise ConfigError(
            "dump holds pre-RoPE activations of a rotary model; "
            "set activations.allow_pre_rope = true to evaluate them anyway"
        )
    # the default grid is nonnegative; grid_min < 0 widens it to negative rho
    grid = np.linspace(
        cfg_get(cfg, "activations.grid_min", float, 0.0),
        cfg_get(cfg, "activations.grid_max", float, 0.95),
        cfg_get(cfg, "activations.grid_points", int, 40),
    )
    n_levels = cfg_get(cfg, "activations.levels", int, 256)
    fp8_variant = cfg_get(cfg, "activations.fp8_variant", str, "e4m3")

    records = read_activation_dump(dump_path)
    results = []
    for calib, evaluation in pair_splits(records):
        res = evaluate_head(calib, evaluation, grid=grid, n_levels=n_levels, fp8_variant=fp8_variant)
        if res is not None:
            results.append(res)
    if not results:
        raise ValueError("no usable heads in the dump (all skipped)")

    heads_path = out_dir / "heads.csv"
    write_csv(
        heads_path,
        ["layer", "head", "rho_star", "err_rho_tuned", "err_int8", "err_fp8"],
        (
            (r.layer, r.head, r.rho_star, r.eval_errors["rho_tuned"], r.eval_errors["int8"], r.eval_errors["fp8"])
            for r in results
        ),
    )
    win_path = out_dir / "winrate.csv"
    write_csv(win_path, ["baseline", "percent_wins"], win_rate_table(results))
    manifest.outputs += [heads_path.name, win_path.name]


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmquant", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mmquant {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="flat key-value config file")
    common.add_argument("--seed", type=int, default=None, help="experiment seed (overrides config)")
    common.add_argument("--out", type=str, required=True, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for trials")

    density = sub.add_parser("density", parents=[common], help="emit lambda* curve and codebook data")
    density.add_argument("--rho", type=float, required=True)
    density.add_argument("--sigma", type=float, default=1.0)
    density.add_argument("--levels", type=int, default=16)

    sub.add_parser("synth-matmul", parents=[common], help="synthetic matrix multiplication benchmark")
    sub.add_parser("highrate", parents=[common], help="high-rate law verification tables")
    sub.add_parser("lsq", parents=[common], help="quantized least-squares schemes")
    sub.add_parser("activations", parents=[common], help="per-head Q/K dump evaluation")
    return parser


_COMMANDS = {
    "density": cmd_density,
    "synth-matmul": cmd_synth,
    "highrate": cmd_highrate,
    "lsq": cmd_lsq,
    "activations": cmd_activations,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else {}
        seed = args.seed if args.seed is not None else cfg_get(cfg, "common.seed", int, 0)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(subcommand=args.subcommand, config=dict(sorted(cfg.items())), seed=seed, version=__version__)
        start = time.perf_counter()
        _COMMANDS[args.subcommand](args, cfg, out_dir, manifest)
        manifest.wall_clock_s = time.perf_counter() - start
        manifest.write(out_dir)
    except ConfigError as exc:
        print(f"mmquant: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DumpFormatError as exc:
        print(f"mmquant: input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"mmquant: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QuadratureError, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        print(f"mmquant: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
