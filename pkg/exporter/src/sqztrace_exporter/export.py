"""Export jobs: run prefill on a pretrained decoder and write trace files.

Each prompt becomes its own trace file; averaging across prompts is the
consumer's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from .hooks import LayerHookError, capture_prefill, find_decoder_layers
from .writer import write_compact_trace, write_full_trace

MODES = ("full", "compact")


@dataclass
class ExportJob:
    model_id: str
    prompts: list[str]
    mode: str = "full"
    out_dir: Path = field(default_factory=lambda: Path("."))
    device: str = "cpu"
    max_prompt_tokens: int = 2048

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.prompts:
            raise ValueError("at least one prompt is required")
        if self.max_prompt_tokens < 1:
            raise ValueError("max_prompt_tokens must be >= 1")
        self.out_dir = Path(self.out_dir)


def export_trace(job: ExportJob, model=None, tokenizer=None) -> list[Path]:
    """Run one hooked forward pass per prompt and write trace files.

    ``model`` and ``tokenizer`` may be passed directly (already loaded);
    otherwise they are loaded from ``job.model_id``.  Returns the written
    paths, one per prompt, named ``trace_<idx>.sqztrc`` under the job's
    output directory.
    """
    if model is None or tokenizer is None:
        from transformers import AutoModelForCausalLM, AutoTokenizer

        if tokenizer is None:
            tokenizer = AutoTokenizer.from_pretrained(job.model_id)
        if model is None:
            model = AutoModelForCausalLM.from_pretrained(job.model_id)
    model = model.to(job.device)
    model.eval()

    n_layer = len(find_decoder_layers(model))
    job.out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for index, prompt in enumerate(job.prompts):
        encoded = tokenizer(
            prompt, return_tensors="pt", truncation=True, max_length=job.max_prompt_tokens
        )
        input_ids = encoded["input_ids"] if isinstance(encoded, dict) else encoded.input_ids
        if input_ids.shape[-1] < 1:
            raise ValueError(f"prompt {index} tokenized to zero tokens")
        input_ids = input_ids.to(job.device)

        pre, post = capture_prefill(model, input_ids)
        if pre.shape[0] != n_layer:
            raise LayerHookError(
                f"captured {pre.shape[0]} layers but the model has {n_layer}"
            )

        path = job.out_dir / f"trace_{index:03d}.sqztrc"
        if job.mode == "compact":
            write_compact_trace(path, pre, post)
        else:
            write_full_trace(path, pre, post)
        written.append(path)
    return written
