"""Q/K activation extraction for GPT-2 and Qwen3 family models."""

__version__ = "0.1.0"

from .capture import ExtractionConfig, collect_head_activations, extract, token_windows
from .dump import HeadRecord, write_dump, write_sidecar

__all__ = [
    "ExtractionConfig",
    "HeadRecord",
    "collect_head_activations",
    "extract",
    "token_windows",
    "write_dump",
    "write_sidecar",
]
