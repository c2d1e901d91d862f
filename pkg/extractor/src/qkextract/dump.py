"""Writer for the QKDUMP01 activation dump format.

Layout (little-endian): magic ``QKDUMP01``; u32 version, n_layers, n_heads,
d_head, n_records; then per record u32 layer, u32 head, u8 split
(0 = calibration, 1 = evaluation), u32 n_tokens, followed by
n_tokens * d_head float32 values for Q (row-major) and the same for K.
A plain-text ``<dump>.meta.txt`` sidecar records the provenance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"QKDUMP01"
VERSION = 1
SPLIT_CODES = {"calibration": 0, "evaluation": 1}


@dataclass(frozen=True)
class HeadRecord:
    """One (layer, head, split) worth of Q and K token matrices."""

    layer: int
    head: int
    split: str
    q: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        if self.split not in SPLIT_CODES:
            raise ValueError(f"split must be one of {sorted(SPLIT_CODES)}, got {self.split!r}")
        if self.q.ndim != 2 or self.q.shape != self.k.shape:
            raise ValueError("q and k must be 2-D token x d_head matrices of equal shape")
        if not (np.isfinite(self.q).all() and np.isfinite(self.k).all()):
            raise ValueError(f"non-finite activations at layer {self.layer} head {self.head}")


def write_dump(records: list[HeadRecord], path, n_layers: int, n_heads: int, d_head: int) -> None:
    """Serialize records; shapes are validated against the header first so a
    mismatch aborts before any partial file exists."""
    for r in records:
        if r.q.shape[1] != d_head:
            raise ValueError(
                f"record (layer {r.layer}, head {r.head}) has d_head {r.q.shape[1]}, header says {d_head}"
            )
        if r.layer >= n_layers or r.head >= n_heads:
            raise ValueError(f"record (layer {r.layer}, head {r.head}) exceeds header dims")
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<IIIII", VERSION, n_layers, n_heads, d_head, len(records))
    for r in records:
        q = np.ascontiguousarray(r.q, dtype="<f4")
        k = np.ascontiguousarray(r.k, dtype="<f4")
        payload += struct.pack("<IIBI", r.layer, r.head, SPLIT_CODES[r.split], q.shape[0])
        payload += q.tobytes()
        payload += k.tobytes()
    Path(path).write_bytes(bytes(payload))


def write_sidecar(dump_path, metadata: dict) -> Path:
    side = Path(str(dump_path) + ".meta.txt")
    side.write_text("".join(f"{k}: {v}\n" for k, v in metadata.items()), encoding="utf-8")
    return side
