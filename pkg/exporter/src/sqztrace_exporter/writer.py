"""Standalone writer for the ``SQZTRC01`` binary trace format.

Little-endian: 8-byte magic, then u32 n_layer / d_model / prompt_len /
flags, then the payload.  Full traces store layer-major, token-major
(A, B) float32 vector pairs; compact traces (flags bit 0) store only the
per-token cosine similarities.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SQZTRC01"
FLAG_COMPACT = 0x1

_HEADER = struct.Struct("<4I")


def token_cosines(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Per-token cosine similarity between (n_layer, T, d) float32 stacks.

    Accumulates in float64 and stores float32, matching what a profiler
    recomputing from the full vectors would produce.
    """
    a = pre.astype(np.float64)
    b = post.astype(np.float64)
    dots = np.einsum("ltd,ltd->lt", a, b)
    norms = np.linalg.norm(a, axis=2) * np.linalg.norm(b, axis=2)
    if (norms == 0.0).any():
        raise ValueError("zero-norm hidden state; cannot compute cosine")
    return np.clip(dots / norms, -1.0, 1.0).astype(np.float32)


def write_full_trace(path: Path, pre: np.ndarray, post: np.ndarray) -> None:
    n_layer, prompt_len, d_model = _checked_dims(pre, post)
    payload = np.ascontiguousarray(np.stack([pre, post], axis=2), dtype="<f4")
    _write(path, n_layer, d_model, prompt_len, 0, payload)


def write_compact_trace(path: Path, pre: np.ndarray, post: np.ndarray) -> None:
    n_layer, prompt_len, d_model = _checked_dims(pre, post)
    payload = np.ascontiguousarray(token_cosines(pre, post), dtype="<f4")
    _write(path, n_layer, d_model, prompt_len, FLAG_COMPACT, payload)


def _checked_dims(pre: np.ndarray, post: np.ndarray) -> tuple[int, int, int]:
    if pre.shape != post.shape or pre.ndim != 3:
        raise ValueError(f"pre/post shapes must match as (n_layer, T, d): {pre.shape} vs {post.shape}")
    if not (np.isfinite(pre).all() and np.isfinite(post).all()):
        raise ValueError("hidden states contain NaN/Inf")
    return pre.shape[0], pre.shape[1], pre.shape[2]


def _write(path: Path, n_layer: int, d_model: int, prompt_len: int,
           flags: int, payload: np.ndarray) -> None:
    header = _HEADER.pack(n_layer, d_model, prompt_len, flags)
    Path(path).write_bytes(MAGIC + header + payload.tobytes())
