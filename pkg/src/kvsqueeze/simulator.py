"""Deterministic toy-transformer engine and the prefill/decode simulation loop.

The toy model is a standard pre-norm decoder (norm, attention, residual,
norm, 2-layer MLP, residual) with pseudo-random weights fully determined
by (seed, shape).  It is not trained and samples greedily: the compression
pipeline only needs realistic hidden-state flow, not learned behavior.

Decode follows the check-then-compress ordering: at each step, each layer
first evicts if it exceeds its budget, attends over the retained entries
only (renormalized), accumulates attention scores, and only then appends
the new token's KV entry.  The newly appended entry may therefore exceed
the budget by one until the next step's check, and is itself eligible for
eviction then.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .eviction import EvictionPolicy, accumulate_scores, evict
from .grouping import BudgetPlan
from .kvmodel import KvCacheState, ModelShape, kv_cache_bytes_actual
from .profiling import PrefillTrace

__all__ = [
    "ToyModelSpec",
    "ToyDecoder",
    "PrefillResult",
    "SimReport",
    "StepRecord",
    "toy_prefill",
    "simulate_decode",
    "attention_mass_retained",
    "make_planted_trace",
    "random_prompt",
]

SIM_MODES = ("squeeze", "uniform", "full")

_RMS_EPS = 1e-6
_ROW_SUM_TOLERANCE = 1e-5

# SeedSequence spawn keys: one independent stream per purpose.
_SEED_WEIGHTS = 0
_SEED_PROMPT = 1
_SEED_PLANTED = 2


@dataclass(frozen=True)
class ToyModelSpec:
    """Deterministic toy decoder parameters.

    Weights are regenerated bit-identically from (seed, shape) on every
    instantiation.  The engine requires kv_dim == d_model; grouped-query
    shapes are supported by the memory model only.
    """

    shape: ModelShape
    seed: int = 0
    weight_scale: float = 0.1
    vocab: int = 256

    def __post_init__(self) -> None:
        if self.shape.kv_dim != self.shape.d_model:
            raise ValueError("toy engine requires kv_dim == d_model")
        if self.vocab < 2:
            raise ValueError(f"vocab must be >= 2, got {self.vocab}")
        if self.weight_scale <= 0:
            raise ValueError(f"weight_scale must be positive, got {self.weight_scale}")

    def to_dict(self) -> dict:
        return {
            "n_layer": self.shape.n_layer,
            "d_model": self.shape.d_model,
            "n_heads": self.shape.n_heads,
            "kv_dim": self.shape.kv_dim,
            "bytes_per_scalar": self.shape.bytes_per_scalar,
            "max_context": self.shape.max_context,
            "seed": self.seed,
            "weight_scale": self.weight_scale,
            "vocab": self.vocab,
        }


def rms_norm(x: np.ndarray) -> np.ndarray:
    """Parameter-free RMS normalization over the last axis."""
    scale = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + _RMS_EPS)
    return x / scale


def _softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=axis, keepdims=True)


def _positional_encoding(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Sinusoidal position features, (len(positions), d_model)."""
    half = d_model // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = positions[:, None] * freq[None, :]
    out = np.zeros((len(positions), d_model))
    out[:, 0 : 2 * half : 2] = np.sin(angles)
    out[:, 1 : 2 * half : 2] = np.cos(angles)
    return out


class ToyDecoder:
    """Weight store plus the forward primitives of the toy model.

    All arithmetic runs in float64; trace vectors are cast to float32 at
    recording time (the trace format is f32).
    """

    def __init__(self, spec: ToyModelSpec):
        self.spec = spec
        shape = spec.shape
        d = shape.d_model
        hidden = 2 * d
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _SEED_WEIGHTS]))
        scale = spec.weight_scale
        self.embedding = rng.normal(0.0, 1.0, (spec.vocab, d))
        self.w_q = [rng.normal(0.0, scale, (d, d)) for _ in range(shape.n_layer)]
        self.w_k = [rng.normal(0.0, scale, (d, d)) for _ in range(shape.n_layer)]
        self.w_v = [rng.normal(0.0, scale, (d, d)) for _ in range(shape.n_layer)]
        self.w_o = [rng.normal(0.0, scale, (d, d)) for _ in range(shape.n_layer)]
        self.w_mlp_in = [rng.normal(0.0, scale, (d, hidden)) for _ in range(shape.n_layer)]
        self.w_mlp_out = [rng.normal(0.0, scale, (hidden, d)) for _ in range(shape.n_layer)]
        self.unembedding = rng.normal(0.0, scale, (d, spec.vocab))
        self.n_heads = shape.n_heads
        self.head_dim = d // shape.n_heads

    def embed(self, token_ids: np.ndarray, start_position: int = 0) -> np.ndarray:
        positions = np.arange(start_position, start_position + len(token_ids), dtype=np.float64)
        return self.embedding[token_ids] + _positional_encoding(positions, self.spec.shape.d_model)

    def split_heads(self, x: np.ndarray) -> np.ndarray:
        """(..., d_model) -> (n_heads, ..., head_dim)."""
        out = x.reshape(*x.shape[:-1], self.n_heads, self.head_dim)
        return np.moveaxis(out, -2, 0)

    def merge_heads(self, x: np.ndarray) -> np.ndarray:
        out = np.moveaxis(x, 0, -2)
        return out.reshape(*out.shape[:-2], self.n_heads * self.head_dim)

    def mlp(self, layer: int, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w_mlp_in[layer]) @ self.w_mlp_out[layer]

    def logits(self, hidden: np.ndarray) -> np.ndarray:
        return rms_norm(hidden) @ self.unembedding


@dataclass
class PrefillResult:
    """Everything prefill produces: the trace, cache occupancy, per-layer
    K/V tensors for every prompt position, and the final hidden states."""

    trace: PrefillTrace
    cache: KvCacheState
    hidden: np.ndarray
    keys: list[np.ndarray]
    values: list[np.ndarray]


def random_prompt(vocab: int, prompt_len: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-random token ids for toy-model runs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SEED_PROMPT]))
    return rng.integers(0, vocab, size=prompt_len, dtype=np.int64)


def toy_prefill(model: ToyModelSpec, prompt: np.ndarray) -> PrefillResult:
    """Run the prompt through the toy decoder, recording the prefill trace.

    Fills every layer's cache with all prompt positions and initializes
    accumulated attention scores from the prefill attention (summed over
    query rows of the head-averaged probabilities).

    Raises:
        ValueError: prompt too long for max_context, or token id out of range.
    """
    decoder = ToyDecoder(model)
    return _prefill(decoder, np.asarray(prompt, dtype=np.int64))


def _prefill(decoder: ToyDecoder, prompt: np.ndarray) -> PrefillResult:
    spec = decoder.spec
    shape = spec.shape
    p = len(prompt)
    if p < 1:
        raise ValueError("prompt must contain at least one token")
    if p > shape.max_context:
        raise ValueError(f"prompt length {p} exceeds max_context {shape.max_context}")
    if prompt.min() < 0 or prompt.max() >= spec.vocab:
        raise ValueError(f"token ids must lie in [0, {spec.vocab})")

    x = decoder.embed(prompt)
    pre = np.empty((shape.n_layer, p, shape.d_model), dtype=np.float32)
    post = np.empty_like(pre)
    keys: list[np.ndarray] = []
    values: list[np.ndarray] = []
    cache = KvCacheState.empty([shape.max_context] * shape.n_layer)
    causal_mask = np.tril(np.ones((p, p), dtype=bool))

    for layer in range(shape.n_layer):
        normed = rms_norm(x)
        q = decoder.split_heads(normed @ decoder.w_q[layer])
        k = decoder.split_heads(normed @ decoder.w_k[layer])
        v = decoder.split_heads(normed @ decoder.w_v[layer])
        logits = q @ np.swapaxes(k, -1, -2) / math.sqrt(decoder.head_dim)
        logits = np.where(causal_mask[None, :, :], logits, -np.inf)
        probs = _softmax(logits)
        attn = decoder.merge_heads(probs @ v) @ decoder.w_o[layer]

        pre[layer] = x.astype(np.float32)
        post[layer] = (x + attn).astype(np.float32)

        keys.append(normed @ decoder.w_k[layer])
        values.append(normed @ decoder.w_v[layer])
        prefill_scores = probs.mean(axis=0).sum(axis=0)
        layer_cache = cache.layers[layer]
        for position in range(p):
            layer_cache.append(position, float(prefill_scores[position]))

        x = x + attn
        x = x + decoder.mlp(layer, rms_norm(x))

    trace = PrefillTrace(
        n_layer=shape.n_layer,
        d_model=shape.d_model,
        prompt_len=p,
        pre=pre,
        post=post,
        source=f"toy:seed={spec.seed}",
    )
    return PrefillResult(trace=trace, cache=cache, hidden=x, keys=keys, values=values)


def attention_mass_retained(full_row: np.ndarray, retained: list[int]) -> float:
    """Fraction of full-cache attention probability landing on retained positions.

    ``full_row`` must be a probability distribution over all historical
    positions (index = position).  Returns exactly 1.0 when every position
    is retained.
    """
    row = np.asarray(full_row, dtype=np.float64)
    if (row < 0).any():
        raise ValueError("attention probabilities must be nonnegative")
    total = float(row.sum())
    if abs(total - 1.0) > _ROW_SUM_TOLERANCE:
        raise ValueError(f"attention row sums to {total}, expected 1 within {_ROW_SUM_TOLERANCE}")
    if len(retained) == len(row):
        return 1.0
    return float(np.clip(row[list(retained)].sum(), 0.0, 1.0))


@dataclass
class StepRecord:
    """End-of-step cache snapshot: sizes after this step's evict + append."""

    step: int
    total_bytes: int
    retained: list[int]
    mass_retained: list[float]


@dataclass
class SimReport:
    """Per-step memory series and quality proxies for one simulation run.

    Step 0 is the post-prefill snapshot (no eviction has happened yet);
    steps 1..gen_len are end-of-decode-step snapshots, taken after the new
    KV entry is appended.  ``mass_retained`` is measured at attention time
    within the step.
    """

    mode: str
    prompt_len: int
    gen_len: int
    batch: int
    model: dict
    policy: dict | None
    plan: dict | None
    steps: list[StepRecord]
    peak_bytes: int
    fingerprint: str
    generated_tokens: list[int]
    final_hidden: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "prompt_len": self.prompt_len,
            "gen_len": self.gen_len,
            "batch": self.batch,
            "model": self.model,
            "policy": self.policy,
            "plan": self.plan,
            "steps": [
                {
                    "step": s.step,
                    "total_bytes": s.total_bytes,
                    "retained": s.retained,
                    "mass_retained": s.mass_retained,
                }
                for s in self.steps
            ],
            "peak_bytes": self.peak_bytes,
            "fingerprint": self.fingerprint,
            "generated_tokens": self.generated_tokens,
        }

    def csv_rows(self) -> list[tuple[int, int, int, int, float]]:
        """Flat (step, layer, retained, bytes, mass_retained) rows."""
        per_entry = 2 * self.model["kv_dim"] * self.model["bytes_per_scalar"] * self.batch
        rows = []
        for record in self.steps:
            for layer, (count, mass) in enumerate(zip(record.retained, record.mass_retained)):
                rows.append((record.step, layer, count, per_entry * count, mass))
        return rows


def _resolve_budgets(
    shape: ModelShape,
    plan: BudgetPlan | None,
    mode: str,
    total_tokens: int,
) -> list[int]:
    if mode not in SIM_MODES:
        raise ValueError(f"mode must be one of {SIM_MODES}, got {mode!r}")
    if mode == "full":
        return [total_tokens] * shape.n_layer
    if plan is None:
        raise ValueError(f"mode {mode!r} requires a budget plan")
    if plan.n_layer != shape.n_layer:
        raise ValueError(f"plan covers {plan.n_layer} layers, model has {shape.n_layer}")
    if mode == "uniform":
        return [plan.b_init] * shape.n_layer
    return list(plan.budgets)


def simulate_decode(
    model: ToyModelSpec,
    prompt: np.ndarray,
    plan: BudgetPlan | None,
    policy: EvictionPolicy,
    gen_len: int,
    mode: str = "squeeze",
    batch: int = 1,
) -> SimReport:
    """Greedy token-by-token decode under per-layer budgets.

    Modes: ``squeeze`` uses the plan's per-layer budgets, ``uniform`` gives
    every layer b_init, ``full`` never evicts.  Budget-floor violations
    surface from the eviction policy on the first over-budget step.

    Raises:
        ValueError: context overflow (prompt_len + gen_len > max_context).
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    shape = model.shape
    total_tokens = len(prompt) + gen_len
    if total_tokens > shape.max_context:
        raise ValueError(
            f"prompt_len + gen_len = {total_tokens} exceeds max_context {shape.max_context}"
        )
    budgets = _resolve_budgets(shape, plan, mode, total_tokens)

    decoder = ToyDecoder(model)
    prefill = _prefill(decoder, prompt)
    cache = prefill.cache
    keys = prefill.keys
    values = prefill.values
    for layer_cache, budget in zip(cache.layers, budgets):
        layer_cache.budget = budget

    steps = [
        StepRecord(
            step=0,
            total_bytes=kv_cache_bytes_actual(cache, shape, batch),
            retained=cache.retained_counts(),
            mass_retained=[1.0] * shape.n_layer,
        )
    ]
    generated: list[int] = []
    x = prefill.hidden[-1]
    next_token = int(np.argmax(decoder.logits(x)))
    scale = math.sqrt(decoder.head_dim)

    for step in range(1, gen_len + 1):
        generated.append(next_token)
        position = len(prompt) + step - 1
        x = decoder.embed(np.array([next_token]), start_position=position)[0]
        step_mass = []

        for layer in range(shape.n_layer):
            layer_cache = cache.layers[layer]
            if len(layer_cache) > budgets[layer]:
                evict(policy, layer_cache, budgets[layer])
            retained = layer_cache.positions

            pre_attention = x
            normed = rms_norm(pre_attention)
            q = decoder.split_heads(normed @ decoder.w_q[layer])  # (H, hd)
            k_full = decoder.split_heads(keys[layer])  # (H, pos, hd)
            logits_full = np.einsum("hd,hpd->hp", q, k_full) / scale
            probs_full = _softmax(logits_full)
            step_mass.append(
                attention_mass_retained(probs_full.mean(axis=0), retained)
            )

            probs_ret = _softmax(logits_full[:, retained])
            accumulate_scores(layer_cache, probs_ret.mean(axis=0))
            v_ret = decoder.split_heads(values[layer])[:, retained, :]
            attn = decoder.merge_heads(np.einsum("hp,hpd->hd", probs_ret, v_ret))
            x = pre_attention + attn @ decoder.w_o[layer]

            keys[layer] = np.vstack([keys[layer], normed @ decoder.w_k[layer]])
            values[layer] = np.vstack([values[layer], normed @ decoder.w_v[layer]])
            layer_cache.append(position)

            x = x + decoder.mlp(layer, rms_norm(x))

        steps.append(
            StepRecord(
                step=step,
                total_bytes=kv_cache_bytes_actual(cache, shape, batch),
                retained=cache.retained_counts(),
                mass_retained=step_mass,
            )
        )
        next_token = int(np.argmax(decoder.logits(x)))

    final_hidden = x if gen_len > 0 else prefill.hidden[-1]
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(final_hidden, dtype=np.float64).tobytes())
    digest.update(np.asarray(generated, dtype=np.int64).tobytes())

    return SimReport(
        mode=mode,
        prompt_len=len(prompt),
        gen_len=gen_len,
        batch=batch,
        model=model.to_dict(),
        policy=policy.to_dict() if policy is not None else None,
        plan=plan.to_dict() if plan is not None else None,
        steps=steps,
        peak_bytes=max(s.total_bytes for s in steps),
        fingerprint=digest.hexdigest(),
        generated_tokens=generated,
        final_hidden=np.asarray(final_hidden, dtype=np.float64),
    )


def make_planted_trace(
    n_layer: int,
    d_model: int,
    prompt_len: int,
    important_set: set[int],
    seed: int = 0,
) -> PrefillTrace:
    """Synthetic trace with ground-truth layer importance.

    Layers in ``important_set`` get post-attention vectors drawn
    independently of the pre-attention ones (expected cosine ~ 0, spread a
    few 1/sqrt(d_model * prompt_len)); all other layers get near-identity
    outputs (cosine >= 0.999, spread ~ 1e-7).  Because the important
    cluster is orders of magnitude wider, the optimal 3-clustering always
    splits it and keeps the near-identity layers together as g3 — provided
    ``important_set`` has at least 2 members.
    """
    important = set(important_set)
    if not important or not important.issubset(range(n_layer)):
        raise ValueError("important_set must be a nonempty subset of layer indices")
    if len(important) >= n_layer:
        raise ValueError("at least one layer must stay unimportant")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SEED_PLANTED]))
    pre = rng.normal(0.0, 1.0, (n_layer, prompt_len, d_model))
    post = np.empty_like(pre)
    for layer in range(n_layer):
        if layer in important:
            post[layer] = rng.normal(0.0, 1.0, (prompt_len, d_model))
        else:
            noise = rng.normal(0.0, 1.0, (prompt_len, d_model))
            norm_a = np.linalg.norm(pre[layer], axis=1, keepdims=True)
            norm_u = np.linalg.norm(noise, axis=1, keepdims=True)
            post[layer] = pre[layer] + noise * (5e-4 * norm_a / norm_u)
    trace = PrefillTrace(
        n_layer=n_layer,
        d_model=d_model,
        prompt_len=prompt_len,
        pre=pre.astype(np.float32),
        post=post.astype(np.float32),
        source=f"planted:seed={seed}",
    )
    trace.validate()
    return trace
