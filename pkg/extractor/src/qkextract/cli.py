"""Command-line wrapper around the extractor."""

from __future__ import annotations

import argparse
import sys

from .capture import ExtractionConfig, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkextract", description=__doc__)
    parser.add_argument("--model", required=True, help="Hugging Face model id (GPT-2 or Qwen3 family)")
    parser.add_argument("--out", required=True, help="output dump path")
    parser.add_argument("--seq-len", type=int, default=128)
    parser.add_argument("--eval-sequences", type=int, default=64)
    parser.add_argument("--calib-sequences", type=int, default=32)
    parser.add_argument("--no-rope", action="store_true", help="skip rotary application (Qwen3 only)")
    parser.add_argument("--gqa-mode", choices=("first", "per_query"), default="first")
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractionConfig(
        model_id=args.model,
        output_path=args.out,
        seq_len=args.seq_len,
        n_eval_sequences=args.eval_sequences,
        n_calib_sequences=args.calib_sequences,
        apply_rope=not args.no_rope,
        gqa_mode=args.gqa_mode,
        device=args.device,
    )
    try:
        path = extract(config)
    except Exception as exc:  # surface a clean one-line failure
        print(f"qkextract: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
