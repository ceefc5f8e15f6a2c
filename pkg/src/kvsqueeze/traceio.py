"""Binary trace file format (magic ``SQZTRC01``).

Little-endian layout:

    8 bytes   magic "SQZTRC01"
    4 x u32   header: n_layer, d_model, prompt_len, flags
    payload   flags bit 0 clear: layer-major, token-major (A, B) record
              pairs, each a d_model float32 array
              flags bit 0 set ("compact"): n_layer x prompt_len float32
              per-token cosines, no vectors
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import TraceFormatError
from .profiling import CompactTrace, PrefillTrace, _batched_cosines

MAGIC = b"SQZTRC01"
FLAG_COMPACT = 0x1

_HEADER = struct.Struct("<4I")
_KNOWN_FLAGS = FLAG_COMPACT


def save_trace(trace: PrefillTrace | CompactTrace, path: str | Path, compact: bool = False) -> None:
    """Write a trace file; ``compact=True`` stores cosines only.

    A ``CompactTrace`` is always written compact.  Cosines written in
    compact mode are exactly the float32 values ``profile_layers`` would
    compute from the full vectors, so both forms profile identically.
    """
    trace.validate()
    path = Path(path)
    if isinstance(trace, CompactTrace):
        compact = True
        payload = np.ascontiguousarray(trace.cosines, dtype="<f4")
    elif compact:
        payload = np.ascontiguousarray(_batched_cosines(trace.pre, trace.post), dtype="<f4")
    else:
        payload = np.ascontiguousarray(
            np.stack([trace.pre, trace.post], axis=2), dtype="<f4"
        )
    flags = FLAG_COMPACT if compact else 0
    header = _HEADER.pack(trace.n_layer, trace.d_model, trace.prompt_len, flags)
    path.write_bytes(MAGIC + header + payload.tobytes())


def load_trace(path: str | Path) -> PrefillTrace | CompactTrace:
    """Read a trace file, returning the full or compact form per its flags.

    Raises:
        TraceFormatError: bad magic, unknown flags, inconsistent header
            dimensions, or truncated/oversized payload.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + _HEADER.size:
        raise TraceFormatError(f"{path}: file shorter than trace header")
    if raw[: len(MAGIC)] != MAGIC:
        raise TraceFormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    n_layer, d_model, prompt_len, flags = _HEADER.unpack_from(raw, len(MAGIC))
    if min(n_layer, d_model, prompt_len) < 1:
        raise TraceFormatError(
            f"{path}: inconsistent header dimensions "
            f"(n_layer={n_layer}, d_model={d_model}, prompt_len={prompt_len})"
        )
    if flags & ~_KNOWN_FLAGS:
        raise TraceFormatError(f"{path}: unknown flag bits 0x{flags:x}")
    compact = bool(flags & FLAG_COMPACT)
    if compact:
        count = n_layer * prompt_len
    else:
        count = n_layer * prompt_len * 2 * d_model
    expected = len(MAGIC) + _HEADER.size + 4 * count
    if len(raw) != expected:
        raise TraceFormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {len(raw)}"
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=len(MAGIC) + _HEADER.size)
    if compact:
        trace: PrefillTrace | CompactTrace = CompactTrace(
            n_layer=n_layer,
            d_model=d_model,
            prompt_len=prompt_len,
            cosines=payload.reshape(n_layer, prompt_len).copy(),
            source=str(path),
        )
    else:
        records = payload.reshape(n_layer, prompt_len, 2, d_model)
        trace = PrefillTrace(
            n_layer=n_layer,
            d_model=d_model,
            prompt_len=prompt_len,
            pre=records[:, :, 0, :].copy(),
            post=records[:, :, 1, :].copy(),
            source=str(path),
        )
    trace.validate()
    return trace
