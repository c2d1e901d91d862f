"""Forward-hook capture of per-head Q/K activations.

GPT-2 family: the fused ``c_attn`` projection output is hooked and split
into Q, K (V discarded).  Qwen3 family: the per-head ``q_norm`` / ``k_norm``
outputs are buffered together with the rotary embedding (cos, sin) tables,
and rotary position embeddings are applied in NumPy so the dump holds the
activations that actually enter the attention product.

Qwen3 uses grouped-query attention (more query heads than key/value heads);
the dump format stores one Q and one K of equal token counts per record, so
each KV head is paired with the first query head of its group by default
(``gqa_mode="per_query"`` instead emits one record per query head with the
group's K repeated).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .dump import HeadRecord, write_dump, write_sidecar

SUPPORTED_FAMILIES = ("gpt2", "qwen3")


@dataclass(frozen=True)
class ExtractionConfig:
    """What to extract and where to put it."""

    model_id: str
    output_path: str
    seq_len: int = 128
    n_eval_sequences: int = 64
    n_calib_sequences: int = 32
    apply_rope: bool = True
    gqa_mode: str = "first"
    device: str = "cpu"

    def __post_init__(self):
        if self.seq_len < 1 or self.n_eval_sequences < 1 or self.n_calib_sequences < 1:
            raise ValueError("sequence geometry must be positive")
        if self.gqa_mode not in ("first", "per_query"):
            raise ValueError(f"gqa_mode must be 'first' or 'per_query', got {self.gqa_mode!r}")


def token_windows(ids: np.ndarray, seq_len: int, n_windows: int) -> list[np.ndarray]:
    """Non-overlapping consecutive windows of ``seq_len`` tokens."""
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ValueError("ids must be a 1-D token array")
    needed = seq_len * n_windows
    if ids.size < needed:
        raise ValueError(f"need {needed} tokens for {n_windows} windows of {seq_len}, got {ids.size}")
    return [ids[i * seq_len : (i + 1) * seq_len] for i in range(n_windows)]


def detect_family(model) -> str:
    family = getattr(model.config, "model_type", "")
    if family not in SUPPORTED_FAMILIES:
        raise ValueError(
            f"unsupported architecture {family!r}; supported families: {', '.join(SUPPORTED_FAMILIES)}"
        )
    return family


def _rotate_half(x: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    return np.concatenate((-x[..., half:], x[..., :half]), axis=-1)


def apply_rope_numpy(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotary embedding on (T, H, D) activations with (T, D) cos/sin tables."""
    return x * cos[:, None, :] + _rotate_half(x) * sin[:, None, :]


def _collect_gpt2(model, sequences, device) -> tuple[dict, int, int]:
    layers = model.transformer.h
    n_head = model.config.n_head
    d_head = model.config.n_embd // n_head
    grabbed: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def make_hook(layer_idx):
        def hook(_module, _inputs, output):
            qkv = output.detach().to(torch.float32).cpu().numpy()[0]  # (T, 3C)
            c = qkv.shape[-1] // 3
            q, k = qkv[:, :c], qkv[:, c : 2 * c]
            t = q.shape[0]
            grabbed[layer_idx] = (
                q.reshape(t, n_head, d_head),
                k.reshape(t, n_head, d_head),
            )

        return hook

    handles = [blk.attn.c_attn.register_forward_hook(make_hook(i)) for i, blk in enumerate(layers)]
    per_layer_q = {i: [] for i in range(len(layers))}
    per_layer_k = {i: [] for i in range(len(layers))}
    try:
        with torch.no_grad():
            for seq in sequences:
                ids = torch.as_tensor(np.asarray(seq), dtype=torch.long, device=device)[None, :]
                grabbed.clear()
                model(ids)
                for i in range(len(layers)):
                    q, k = grabbed[i]
                    per_layer_q[i].append(q)
                    per_layer_k[i].append(k)
    finally:
        for h in handles:
            h.remove()
    stacked = {
        i: (np.concatenate(per_layer_q[i]), np.concatenate(per_layer_k[i])) for i in per_layer_q
    }
    return stacked, n_head, d_head


def _collect_qwen3(model, sequences, device, apply_rope) -> tuple[dict, int, int, int]:
    layers = model.model.layers
    n_q_heads = model.config.num_attention_heads
    n_kv_heads = model.config.num_key_value_heads
    d_head = model.config.head_dim
    grabbed_q: dict[int, np.ndarray] = {}
    grabbed_k: dict[int, np.ndarray] = {}
    rope: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def q_hook(layer_idx):
        def hook(_module, _inputs, output):
            grabbed_q[layer_idx] = output.detach().to(torch.float32).cpu().numpy()[0]  # (T, Hq, D)

        return hook

    def k_hook(layer_idx):
        def hook(_module, _inputs, output):
            grabbed_k[layer_idx] = output.detach().to(torch.float32).cpu().numpy()[0]  # (T, Hkv, D)

        return hook

    def rope_hook(_module, _inputs, output):
        cos, sin = output
        rope["tables"] = (
            cos.detach().to(torch.float32).cpu().numpy()[0],
            sin.detach().to(torch.float32).cpu().numpy()[0],
        )

    handles = [model.model.rotary_emb.register_forward_hook(rope_hook)]
    for i, blk in enumerate(layers):
        handles.append(blk.self_attn.q_norm.register_forward_hook(q_hook(i)))
        handles.append(blk.self_attn.k_norm.register_forward_hook(k_hook(i)))

    per_layer_q = {i: [] for i in range(len(layers))}
    per_layer_k = {i: [] for i in range(len(layers))}
    try:
        with torch.no_grad():
            for seq in sequences:
                ids = torch.as_tensor(np.asarray(seq), dtype=torch.long, device=device)[None, :]
                grabbed_q.clear()
                grabbed_k.clear()
                rope.clear()
                model(ids)
                cos, sin = rope["tables"]
                for i in range(len(layers)):
                    q, k = grabbed_q[i], grabbed_k[i]
                    if apply_rope:
                        q = apply_rope_numpy(q, cos, sin)
                        k = apply_rope_numpy(k, cos, sin)
                    per_layer_q[i].append(q)
                    per_layer_k[i].append(k)
    finally:
        for h in handles:
            h.remove()
    stacked = {
        i: (np.concatenate(per_layer_q[i]), np.concatenate(per_layer_k[i])) for i in per_layer_q
    }
    return stacked, n_q_heads, n_kv_heads, d_head


def collect_head_activations(
    model,
    sequences: Sequence[np.ndarray],
    split: str,
    apply_rope: bool = True,
    gqa_mode: str = "first",
    device: str = "cpu",
) -> list[HeadRecord]:
    """Run sequences through the model and return per-head records for one split."""
    family = detect_family(model)
    records: list[HeadRecord] = []
    if family == "gpt2":
        stacked, n_head, _ = _collect_gpt2(model, sequences, device)
        for layer, (q, k) in sorted(stacked.items()):
            for head in range(n_head):
                records.append(
                    HeadRecord(layer, head, split, q[:, head].astype(np.float32), k[:, head].astype(np.float32))
                )
        return records

    stacked, n_q, n_kv, _ = _collect_qwen3(model, sequences, device, apply_rope)
    group = n_q // n_kv
    for layer, (q, k) in sorted(stacked.items()):
        if gqa_mode == "first":
            for kv_head in range(n_kv):
                records.append(
                    HeadRecord(
                        layer,
                        kv_head,
                        split,
                        q[:, kv_head * group].astype(np.float32),
                        k[:, kv_head].astype(np.float32),
                    )
                )
        else:
            for q_head in range(n_q):
                records.append(
                    HeadRecord(
                        layer,
                        q_head,
                        split,
                        q[:, q_head].astype(np.float32),
                        k[:, q_head // group].astype(np.float32),
                    )
                )
    return records


def extract(
    config: ExtractionConfig,
    model=None,
    eval_sequences: Sequence[np.ndarray] | None = None,
    calib_sequences: Sequence[np.ndarray] | None = None,
) -> str:
    """Capture both splits and write the dump plus its metadata sidecar.

    When ``model`` or the token sequences are omitted they are obtained from
    the Hugging Face hub (model weights, tokenizer) and WikiText-2
    (evaluation windows from the training split, calibration windows from
    the validation split), which requires network access.
    """
    if model is None or eval_sequences is None or calib_sequences is None:
        model, eval_sequences, calib_sequences = _load_remote(config)
    model.eval()
    family = detect_family(model)

    records = collect_head_activations(
        model, eval_sequences, "evaluation", config.apply_rope, config.gqa_mode, config.device
    )
    records += collect_head_activations(
        model, calib_sequences, "calibration", config.apply_rope, config.gqa_mode, config.device
    )
    records.sort(key=lambda r: (r.layer, r.head, r.split))

    n_layers = max(r.layer for r in records) + 1
    n_heads = max(r.head for r in records) + 1
    d_head = records[0].q.shape[1]
    write_dump(records, config.output_path, n_layers, n_heads, d_head)
    rope_model = family == "qwen3"
    write_sidecar(
        config.output_path,
        {
            "model": config.model_id,
            "family": family,
            "seq_len": config.seq_len,
            "n_eval_sequences": len(eval_sequences),
            "n_calib_sequences": len(calib_sequences),
            "rope_model": str(rope_model).lower(),
            "post_rope": str(not rope_model or config.apply_rope).lower(),
            "gqa_mode": config.gqa_mode,
        },
    )
    return config.output_path


def _load_remote(config: ExtractionConfig):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    model = AutoModelForCausalLM.from_pretrained(config.model_id)
    tokenizer = AutoTokenizer.from_pretrained(config.model_id)

    import datasets  # optional dependency, needed only for the remote path

    wikitext = datasets.load_dataset("wikitext", "wikitext-2-raw-v1")
    train_ids = np.asarray(
        tokenizer("\n\n".join(wikitext["train"]["text"]), return_tensors="np")["input_ids"][0]
    )
    val_ids = np.asarray(
        tokenizer("\n\n".join(wikitext["validation"]["text"]), return_tensors="np")["input_ids"][0]
    )
    eval_sequences = token_windows(train_ids, config.seq_len, config.n_eval_sequences)
    calib_sequences = token_windows(val_ids, config.seq_len, config.n_calib_sequences)
    return model, eval_sequences, calib_sequences
