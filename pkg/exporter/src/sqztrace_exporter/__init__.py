"""Trace exporter: hooks pretrained decoders and writes SQZTRC01 files."""

from .export import MODES, ExportJob, export_trace
from .hooks import LayerHookError, capture_prefill, find_decoder_layers
from .writer import FLAG_COMPACT, MAGIC, token_cosines, write_compact_trace, write_full_trace

__version__ = "0.1.0"

__all__ = [
    "MODES",
    "ExportJob",
    "export_trace",
    "LayerHookError",
    "capture_prefill",
    "find_decoder_layers",
    "FLAG_COMPACT",
    "MAGIC",
    "token_cosines",
    "write_compact_trace",
    "write_full_trace",
    "__version__",
]
