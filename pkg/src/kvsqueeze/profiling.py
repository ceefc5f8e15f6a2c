"""Layer-importance profiling from pre/post-attention hidden states.

A layer whose output embedding stays close to its input (cosine similarity
near 1) inserts little information and is a good candidate to donate cache
budget.  The profile is the per-layer mean of per-token cosine similarities
measured during prefill.

The post-attention state is taken after the attention sublayer's residual
addition (B = A + Attn(norm(A))): that is the point where "how much did
the embedding change" is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTraceError

__all__ = [
    "PrefillTrace",
    "CompactTrace",
    "CosineProfile",
    "cosine_similarity",
    "profile_layers",
]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    The dot product and norms accumulate in float64 regardless of input
    dtype, so float32 traces with d_model up to 8192 do not lose precision.

    Raises:
        ValueError: dimension mismatch.
        DegenerateTraceError: zero-norm or non-finite vector.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DegenerateTraceError("non-finite vector component")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateTraceError("zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _batched_cosines(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Per-token cosines for (n_layer, prompt_len, d_model) stacks.

    float64 accumulation, float32 result; identical values to calling
    ``cosine_similarity`` per entry, but annotates (layer, token) on error.
    """
    a = pre.astype(np.float64)
    b = post.astype(np.float64)
    bad = ~(np.isfinite(a).all(axis=2) & np.isfinite(b).all(axis=2))
    if bad.any():
        layer, token = map(int, np.argwhere(bad)[0])
        raise DegenerateTraceError(
            f"non-finite vector component at layer {layer}, token {token}"
        )
    na = np.linalg.norm(a, axis=2)
    nb = np.linalg.norm(b, axis=2)
    zero = (na == 0.0) | (nb == 0.0)
    if zero.any():
        layer, token = map(int, np.argwhere(zero)[0])
        raise DegenerateTraceError(f"zero-norm vector at layer {layer}, token {token}")
    dots = np.einsum("ltd,ltd->lt", a, b)
    cos = np.clip(dots / (na * nb), -1.0, 1.0)
    return cos.astype(np.float32)


@dataclass
class PrefillTrace:
    """Full prefill trace: per layer, per token, pre/post-attention vectors.

    ``pre`` and ``post`` have shape (n_layer, prompt_len, d_model), float32.
    """

    n_layer: int
    d_model: int
    prompt_len: int
    pre: np.ndarray
    post: np.ndarray
    source: str = ""

    def validate(self) -> None:
        expected = (self.n_layer, self.prompt_len, self.d_model)
        for name, arr in (("pre", self.pre), ("post", self.post)):
            if arr.shape != expected:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected}")
            if arr.dtype != np.float32:
                raise ValueError(f"{name} must be float32, got {arr.dtype}")
            if not np.isfinite(arr).all():
                raise DegenerateTraceError(f"{name} contains NaN/Inf components")

    def token_cosines(self) -> np.ndarray:
        """(n_layer, prompt_len) float32 per-token cosine similarities."""
        return _batched_cosines(self.pre, self.post)


@dataclass
class CompactTrace:
    """Cosines-only trace: the per-token similarity matrix without vectors."""

    n_layer: int
    d_model: int
    prompt_len: int
    cosines: np.ndarray
    source: str = ""

    def validate(self) -> None:
        expected = (self.n_layer, self.prompt_len)
        if self.cosines.shape != expected:
            raise ValueError(f"cosines have shape {self.cosines.shape}, expected {expected}")
        if self.cosines.dtype != np.float32:
            raise ValueError(f"cosines must be float32, got {self.cosines.dtype}")
        if not np.isfinite(self.cosines).all():
            raise DegenerateTraceError("cosines contain NaN/Inf")
        if (self.cosines < -1.0).any() or (self.cosines > 1.0).any():
            raise ValueError("cosines outside [-1, 1]")

    def token_cosines(self) -> np.ndarray:
        return self.cosines


@dataclass
class CosineProfile:
    """Per-layer mean cosine similarity over prompt tokens."""

    mean_cos: list[float]
    prompt_len: int
    source: str = ""
    token_cosines: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_layer(self) -> int:
        return len(self.mean_cos)

    def validate(self) -> None:
        if any(not (-1.0 <= m <= 1.0) for m in self.mean_cos):
            raise ValueError("mean_cos values must lie in [-1, 1]")

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"layer": i, "mean_cos": float(m)} for i, m in enumerate(self.mean_cos)
            ],
            "prompt_len": self.prompt_len,
        }

    @classmethod
    def from_dict(cls, doc: dict, source: str = "") -> "CosineProfile":
        layers = sorted(doc["layers"], key=lambda entry: entry["layer"])
        if [entry["layer"] for entry in layers] != list(range(len(layers))):
            raise ValueError("profile layers must cover 0..n_layer-1 exactly once")
        return cls(
            mean_cos=[float(entry["mean_cos"]) for entry in layers],
            prompt_len=int(doc["prompt_len"]),
            source=source,
        )


def profile_layers(
    trace: PrefillTrace | CompactTrace, keep_token_cosines: bool = False
) -> CosineProfile:
    """Reduce a trace to per-layer mean cosines.

    Per-token cosines are float32 (full traces compute them with float64
    accumulators first), so a full trace and the compact trace saved from
    it produce bit-identical profiles.  The per-layer mean runs in float64.
    Layers reduce independently, so a parallel implementation would give
    bit-identical results.
    """
    trace.validate()
    cosines = trace.token_cosines()
    means = cosines.astype(np.float64).mean(axis=1)
    profile = CosineProfile(
        mean_cos=[float(m) for m in means],
        prompt_len=trace.prompt_len,
        source=trace.source,
        token_cosines=cosines if keep_token_cosines else None,
    )
    profile.validate()
    return profile
