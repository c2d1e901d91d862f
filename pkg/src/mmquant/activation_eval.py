"""Per-head evaluation of product-aware quantization on Q/K activation dumps.

Consumes the binary dump format produced by the activation extractor, applies
per-token l-infinity scaling, tunes the model correlation rho per attention
head on the calibration split, and scores the tuned quantizer against INT8
and FP8 baselines by the relative Frobenius error of the pre-softmax logits
``||Q K^T - Qhat Khat^T||_F / ||Q K^T||_F``.

Dump format (little-endian):

* header: magic ``QKDUMP01``, u32 version, u32 n_layers, u32 n_heads,
  u32 d_head, u32 n_records;
* per record: u32 layer, u32 head, u8 split (0 = calibration,
  1 = evaluation), u32 n_tokens, then n_tokens * d_head float32 values for
  Q (row-major) followed by the same for K.

A plain-text sidecar ``<dump>.meta.txt`` carries model name, sequence
geometry, and whether the values are post-RoPE.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quantizer_zoo import QuantizerConfig, _unit_matmul_opt_codebook, build_quantizer

logger = logging.getLogger(__name__)

MAGIC = b"QKDUMP01"
VERSION = 1
SPLIT_NAMES = {0: "calibration", 1: "evaluation"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}

DEFAULT_LEVELS = 256
RHO_GRID_POINTS = 40
RHO_GRID_MAX = 0.95


class DumpFormatError(ValueError):
    """Malformed activation dump; ``code`` distinguishes the failure class."""

    code = 0


class DumpMagicError(DumpFormatError):
    code = 1


class DumpTruncatedError(DumpFormatError):
    code = 2


class DumpValueError(DumpFormatError):
    code = 3


class DumpHeaderError(DumpFormatError):
    code = 4


@dataclass(frozen=True, eq=False)
class HeadActivations:
    """Q and K token matrices of one (layer, head) for one split."""

    layer: int
    head: int
    q: np.ndarray
    k: np.ndarray
    split: str

    def __post_init__(self):
        if self.split not in SPLIT_CODES:
            raise ValueError(f"split must be one of {sorted(SPLIT_CODES)}, got {self.split!r}")
        q = np.asarray(self.q)
        k = np.asarray(self.k)
        if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
            raise ValueError("q and k must be 2-D with equal column counts")
        if not (np.isfinite(q).all() and np.isfinite(k).all()):
            raise ValueError(f"non-finite activations in layer {self.layer} head {self.head}")


@dataclass(frozen=True)
class RhoTuneResult:
    """Per-head tuning outcome and per-method evaluation errors."""

    layer: int
    head: int
    rho_star: float
    calib_error: float
    eval_errors: dict = field(default_factory=dict)


def default_rho_grid(points: int = RHO_GRID_POINTS, max_rho: float = RHO_GRID_MAX) -> np.ndarray:
    """Evenly spaced nonnegative rho grid, [0, 0.95] x 40 by default."""
    return np.linspace(0.0, max_rho, points)


# ---------------------------------------------------------------------------
# Dump I/O
# ---------------------------------------------------------------------------


def write_activation_dump(
    records: list[HeadActivations],
    path,
    n_layers: int | None = None,
    n_heads: int | None = None,
    d_head: int | None = None,
) -> None:
    """Serialize records into the dump format; dims are inferred when omitted."""
    if n_layers is None:
        n_layers = max((r.layer for r in records), default=-1) + 1
    if n_heads is None:
        n_heads = max((r.head for r in records), default=-1) + 1
    if d_head is None:
        d_head = records[0].q.shape[1] if records else 0
    for r in records:
        if r.q.shape[1] != d_head or r.k.shape[1] != d_head:
            raise ValueError("all records must share the header d_head")
        if r.q.shape[0] != r.k.shape[0]:
            raise ValueError("the dump format stores one token count per record; q and k rows differ")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII", VERSION, n_layers, n_heads, d_head, len(records)))
        for r in records:
            q = np.ascontiguousarray(r.q, dtype="<f4")
            k = np.ascontiguousarray(r.k, dtype="<f4")
            fh.write(struct.pack("<IIBI", r.layer, r.head, SPLIT_CODES[r.split], q.shape[0]))
            fh.write(q.tobytes())
            fh.write(k.tobytes())


def read_activation_dump(path) -> list[HeadActivations]:
    """Parse a dump file, validating magic, payload length, and finiteness."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise DumpMagicError(f"bad magic in {path}: expected {MAGIC!r}")
    off = len(MAGIC)
    header_size = struct.calcsize("<IIIII")
    if len(data) < off + header_size:
        raise DumpTruncatedError(f"{path}: header truncated")
    version, n_layers, n_heads, d_head, n_records = struct.unpack_from("<IIIII", data, off)
    off += header_size
    if version != VERSION:
        raise DumpHeaderError(f"{path}: unsupported dump version {version}")

    records: list[HeadActivations] = []
    rec_header = struct.Struct("<IIBI")
    for idx in range(n_records):
        if len(data) < off + rec_header.size:
            raise DumpTruncatedError(f"{path}: record {idx} header truncated")
        layer, head, split_code, n_tokens = rec_header.unpack_from(data, off)
        off += rec_header.size
        if split_code not in SPLIT_NAMES:
            raise DumpHeaderError(f"{path}: record {idx} has unknown split code {split_code}")
        if layer >= n_layers or head >= n_heads:
            raise DumpHeaderError(
                f"{path}: record {idx} indexes (layer={layer}, head={head}) outside the header dims"
            )
        nbytes = 4 * n_tokens * d_head
        if len(data) < off + 2 * nbytes:
            raise DumpTruncatedError(f"{path}: record {idx} payload truncated")
        q = np.frombuffer(data, dtype="<f4", count=n_tokens * d_head, offset=off).reshape(
            n_tokens, d_head
        )
        off += nbytes
        k = np.frombuffer(data, dtype="<f4", count=n_tokens * d_head, offset=off).reshape(
            n_tokens, d_head
        )
        off += nbytes
        if not (np.isfinite(q).all() and np.isfinite(k).all()):
            raise DumpValueError(f"{path}: record {idx} contains non-finite values")
        records.append(
            HeadActivations(layer=layer, head=head, q=q.copy(), k=k.copy(), split=SPLIT_NAMES[split_code])
        )
    if off != len(data):
        raise DumpHeaderError(f"{path}: {len(data) - off} trailing bytes after the last record")
    return records


def write_sidecar(dump_path, metadata: dict) -> Path:
    """Write the plain-text metadata sidecar next to a dump file."""
    side = Path(str(dump_path) + ".meta.txt")
    lines = [f"{key}: {value}" for key, value in metadata.items()]
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return side


def read_sidecar(dump_path) -> dict:
    """Read the sidecar written by :func:`write_sidecar`; {} when absent."""
    side = Path(str(dump_path) + ".meta.txt")
    if not side.exists():
        return {}
    meta = {}
    for line in side.read_text(encoding="utf-8").splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            meta[key.strip()] = value.strip()
    return meta


# ---------------------------------------------------------------------------
# Scaling and the logit-error metric
# ---------------------------------------------------------------------------


def per_token_linf_scale(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Divide each token row by its max absolute entry, mapping into [-1, 1].

    All-zero rows get scale 1 and stay zero, so unscaling is always exact.
    """
    M = np.asarray(M, dtype=float)
    scales = np.max(np.abs(M), axis=1)
    scales = np.where(scales == 0.0, 1.0, scales)
    return M / scales[:, None], scales


def rel_frob_product_error(
    q: np.ndarray,
    k: np.ndarray,
    q_hat: np.ndarray,
    k_hat: np.ndarray,
) -> float:
    """||q k^T - q_hat k_hat^T||_F / ||q k^T||_F via d x d Gram matrices.

    Writing the error as q E_k^T + E_q k_hat^T with E_q = q - q_hat and
    E_k = k - k_hat, its squared norm is exactly

        tr((q^T q)(E_k^T E_k)) + 2 tr((q^T E_q)(k_hat^T E_k))
        + tr((E_q^T E_q)(k_hat^T k_hat)),

    so no token x token product is ever formed and every term carries at
    least one small error factor (no large-sum cancellation).  Returns NaN
    when the reference product is exactly zero.
    """
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    e_q = q - np.asarray(q_hat, dtype=float)
    e_k = k - np.asarray(k_hat, dtype=float)
    k_hat = np.asarray(k_hat, dtype=float)

    def tr_prod(a: np.ndarray, b: np.ndarray) -> float:
        # tr(a @ b) for d x d factors
        return float(np.sum(a * b.T))

    den = tr_prod(q.T @ q, k.T @ k)
    if den == 0.0:
        return math.nan
    # q k^T - q_hat k_hat^T = q e_k^T + e_q k_hat^T
    num = (
        tr_prod(q.T @ q, e_k.T @ e_k)
        + 2.0 * tr_prod(q.T @ e_q, k_hat.T @ e_k)
        + tr_prod(e_q.T @ e_q, k_hat.T @ k_hat)
    )
    return math.sqrt(max(num, 0.0) / den)


# ---------------------------------------------------------------------------
# Rho tuning and baselines
# ---------------------------------------------------------------------------


def _quantize_per_token(M: np.ndarray, cb) -> np.ndarray:
    scaled, scales = per_token_linf_scale(M)
    return cb.quantize(scaled) * scales[:, None]


def _matmul_opt_codebook(rho: float, sigma_hat: float, n_levels: int):
    return _unit_matmul_opt_codebook(float(rho), n_levels).scaled(sigma_hat)


def tune_rho(
    calib: HeadActivations,
    grid: np.ndarray | None = None,
    n_levels: int = DEFAULT_LEVELS,
) -> RhoTuneResult | None:
    """Grid-search rho minimizing the calibration logit error of one head.

    Quantizers are built per rho from the scaled calibration statistics
    (sigma-hat of the scaled matrices, ``n_levels`` levels).  Ties go to the
    smaller rho.  Returns None (head skipped) when the reference product is
    exactly zero.
    """
    if grid is None:
        grid = default_rho_grid()
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("rho grid must be nonempty")
    q_scaled, q_scales = per_token_linf_scale(calib.q)
    k_scaled, k_scales = per_token_linf_scale(calib.k)
    sigma_q = float(np.std(q_scaled))
    sigma_k = float(np.std(k_scaled))
    if sigma_q == 0.0 or sigma_k == 0.0:
        logger.warning("layer %d head %d: zero-variance calibration data; head skipped",
                       calib.layer, calib.head)
        return None
    best_rho = None
    best_err = math.inf
    for rho in grid:
        cb_q = _matmul_opt_codebook(rho, sigma_q, n_levels)
        cb_k = _matmul_opt_codebook(rho, sigma_k, n_levels)
        q_hat = cb_q.quantize(q_scaled) * q_scales[:, None]
        k_hat = cb_k.quantize(k_scaled) * k_scales[:, None]
        err = rel_frob_product_error(calib.q, calib.k, q_hat, k_hat)
        if math.isnan(err):
            logger.warning("layer %d head %d: zero reference product; head skipped",
                           calib.layer, calib.head)
            return None
        if err < best_err:
            best_err = err
            best_rho = float(rho)
    return RhoTuneResult(layer=calib.layer, head=calib.head, rho_star=best_rho, calib_error=best_err)


def evaluate_head(
    calib: HeadActivations,
    evaluation: HeadActivations,
    grid: np.ndarray | None = None,
    n_levels: int = DEFAULT_LEVELS,
    fp8_variant: str = "e4m3",
) -> RhoTuneResult | None:
    """Tune rho on the calibration split and score all methods on evaluation.

    Sigma-hat for the tuned quantizer comes from the scaled calibration data
    (never from evaluation data); INT8 and FP8 use their fixed codebooks on
    the same per-token scaling.
    """
    tuned = tune_rho(calib, grid=grid, n_levels=n_levels)
    if tuned is None:
        return None
    q_scaled, _ = per_token_linf_scale(calib.q)
    k_scaled, _ = per_token_linf_scale(calib.k)
    cb_q = _matmul_opt_codebook(tuned.rho_star, float(np.std(q_scaled)), n_levels)
    cb_k = _matmul_opt_codebook(tuned.rho_star, float(np.std(k_scaled)), n_levels)
    cb_int8 = build_quantizer(QuantizerConfig("int8_symmetric"))
    cb_fp8 = build_quantizer(QuantizerConfig("fp8_e4m3", params={"variant": fp8_variant}))

    def method_error(cq, ck) -> float:
        q_hat = _quantize_per_token(evaluation.q, cq)
        k_hat = _quantize_per_token(evaluation.k, ck)
        return rel_frob_product_error(evaluation.q, evaluation.k, q_hat, k_hat)

    errors = {
        "rho_tuned": method_error(cb_q, cb_k),
        "int8": method_error(cb_int8, cb_int8),
        "fp8": method_error(cb_fp8, cb_fp8),
    }
    if any(math.isnan(v) for v in errors.values()):
        logger.warning("layer %d head %d: zero evaluation product; head skipped",
                       calib.layer, calib.head)
        return None
    return RhoTuneResult(
        layer=tuned.layer,
        head=tuned.head,
        rho_star=tuned.rho_star,
        calib_error=tuned.calib_error,
        eval_errors=errors,
    )


def win_rate_table(results: list[RhoTuneResult]) -> list[tuple[str, float]]:
    """Percent of heads where the tuned quantizer strictly beats each baseline."""
    if not results:
        raise ValueError("win_rate_table requires at least one head result")
    baselines = sorted({k for r in results for k in r.eval_errors if k != "rho_tuned"})
    table = []
    for baseline in baselines:
        wins = sum(1 for r in results if r.eval_errors["rho_tuned"] < r.eval_errors[baseline])
        table.append((baseline, 100.0 * wins / len(results)))
    return table


def pair_splits(records: list[HeadActivations]) -> list[tuple[HeadActivations, HeadActivations]]:
    """Match calibration and evaluation records per (layer, head)."""
    by_key: dict[tuple[int, int], dict[str, HeadActivations]] = {}
    for r in records:
        by_key.setdefault((r.layer, r.head), {})[r.split] = r
    pairs = []
    for key in sorted(by_key):
        splits = by_key[key]
        if "calibration" in splits and "evaluation" in splits:
            pairs.append((splits["calibration"], splits["evaluation"]))
        else:
            logger.warning("layer %d head %d: missing split, head skipped", key[0], key[1])
    return pairs
