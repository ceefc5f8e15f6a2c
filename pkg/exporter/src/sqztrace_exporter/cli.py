"""CLI: export prefill traces from a pretrained causal LM."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import MODES, ExportJob, export_trace
from .hooks import LayerHookError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqztrace-export",
        description="Capture per-layer pre/post-attention hidden states during "
        "prefill and write SQZTRC01 trace files (one per prompt).",
    )
    parser.add_argument("model", help="Model identifier or local path")
    parser.add_argument("prompt_file", type=Path, help="Text file, one prompt per line")
    parser.add_argument("--mode", choices=MODES, default="full")
    parser.add_argument("--out", type=Path, default=Path("traces"),
                        help="Output directory (default: ./traces)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-tokens", type=int, default=2048,
                        help="Truncate prompts to this many tokens")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    prompts = [line for line in args.prompt_file.read_text().splitlines() if line.strip()]
    if not prompts:
        print(f"error: no prompts in {args.prompt_file}", file=sys.stderr)
        return 2
    job = ExportJob(
        model_id=args.model,
        prompts=prompts,
        mode=args.mode,
        out_dir=args.out,
        device=args.device,
        max_prompt_tokens=args.max_tokens,
    )
    try:
        written = export_trace(job)
    except LayerHookError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
