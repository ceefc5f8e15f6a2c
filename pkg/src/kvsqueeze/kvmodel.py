"""Core domain types and the closed-form KV-cache memory model.

The cache holds, per attention layer, one key and one value projection per
retained token.  ``kv_cache_bytes`` bounds the cache from the model shape
alone; ``kv_cache_bytes_actual`` counts what a (possibly evicted) cache
state really occupies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ByteOverflowError, ConfigError

_U64_MAX = 2**64 - 1

_CONFIG_KEYS = (
    "n_layer",
    "d_model",
    "n_heads",
    "kv_dim",
    "bytes_per_scalar",
    "max_context",
    "prompt_len",
    "gen_len",
    "batch",
    "seed",
)


@dataclass(frozen=True)
class ModelShape:
    """Static dimensions and scalar width of a (toy or traced) model.

    ``kv_dim`` is the width of the K/V projections and defaults to
    ``d_model``; grouped-query models set it smaller.
    """

    n_layer: int
    d_model: int
    n_heads: int = 1
    kv_dim: int | None = None
    bytes_per_scalar: int = 2
    max_context: int = 4096

    def __post_init__(self) -> None:
        if self.kv_dim is None:
            object.__setattr__(self, "kv_dim", self.d_model)
        if self.n_layer < 1:
            raise ValueError(f"n_layer must be >= 1, got {self.n_layer}")
        if self.d_model < 1:
            raise ValueError(f"d_model must be >= 1, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.kv_dim < 1:
            raise ValueError(f"kv_dim must be >= 1, got {self.kv_dim}")
        if self.bytes_per_scalar not in (1, 2, 4, 8):
            raise ValueError(
                f"bytes_per_scalar must be one of 1, 2, 4, 8, got {self.bytes_per_scalar}"
            )
        if self.max_context < 1:
            raise ValueError(f"max_context must be >= 1, got {self.max_context}")


@dataclass(frozen=True)
class SimConfig:
    """Workload parameters: prompt length, generation length, batch, seed."""

    prompt_len: int
    gen_len: int = 0
    batch: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.prompt_len < 1:
            raise ValueError(f"prompt_len must be >= 1, got {self.prompt_len}")
        if self.gen_len < 0:
            raise ValueError(f"gen_len must be >= 0, got {self.gen_len}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")

    @property
    def total_tokens(self) -> int:
        return self.prompt_len + self.gen_len


@dataclass
class LayerCache:
    """Retained token positions of one layer, with accumulated attention scores.

    ``positions`` is kept sorted ascending; ``scores`` maps each retained
    position to its nonnegative accumulated attention mass.  Evicted
    positions lose their score entry permanently.
    """

    budget: int
    positions: list[int] = field(default_factory=list)
    scores: dict[int, float] = field(default_factory=dict)

    def append(self, position: int, score: float = 0.0) -> None:
        if self.positions and position <= self.positions[-1]:
            raise ValueError(
                f"position {position} not greater than last retained {self.positions[-1]}"
            )
        self.positions.append(position)
        self.scores[position] = score

    def validate(self) -> None:
        if any(b >= a for a, b in zip(self.positions[1:], self.positions)):
            raise ValueError("retained positions must be strictly increasing")
        if set(self.scores) != set(self.positions):
            raise ValueError("scores must cover exactly the retained positions")
        if any(s < 0 for s in self.scores.values()):
            raise ValueError("accumulated scores must be nonnegative")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class KvCacheState:
    """Per-layer retained-position occupancy of the whole cache.

    Single-writer: only the owning simulation mutates it.  Read-only
    snapshots are safe to share.
    """

    layers: list[LayerCache]

    @classmethod
    def empty(cls, budgets: list[int]) -> "KvCacheState":
        return cls(layers=[LayerCache(budget=b) for b in budgets])

    @property
    def n_layer(self) -> int:
        return len(self.layers)

    def retained_counts(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def validate(self) -> None:
        for layer in self.layers:
            layer.validate()


def kv_cache_bytes(shape: ModelShape, cfg: SimConfig) -> int:
    """Maximum cache size in bytes for a full (uncompressed) run.

    2 (K and V) x kv_dim x n_layer x batch x (prompt_len + gen_len) scalars.

    Raises:
        ByteOverflowError: result exceeds the unsigned 64-bit range.
    """
    total = (
        2 * shape.kv_dim * shape.n_layer * cfg.batch * cfg.total_tokens * shape.bytes_per_scalar
    )
    if total > _U64_MAX:
        raise ByteOverflowError(f"KV-cache byte count {total} exceeds 64-bit range")
    return total


def kv_cache_bytes_actual(cache: KvCacheState, shape: ModelShape, batch: int = 1) -> int:
    """Bytes occupied by the retained entries of a live cache state.

    Equals ``kv_cache_bytes`` when every layer retains all
    prompt_len + gen_len tokens.

    Raises:
        ValueError: cache layer count does not match the shape.
        ByteOverflowError: result exceeds the unsigned 64-bit range.
    """
    if cache.n_layer != shape.n_layer:
        raise ValueError(
            f"cache has {cache.n_layer} layers but shape declares {shape.n_layer}"
        )
    retained = sum(len(layer) for layer in cache.layers)
    total = 2 * shape.kv_dim * shape.bytes_per_scalar * batch * retained
    if total > _U64_MAX:
        raise ByteOverflowError(f"KV-cache byte count {total} exceeds 64-bit range")
    return total


def per_token_bytes(shape: ModelShape, batch: int = 1) -> int:
    """Cache bytes added by one token across all layers."""
    return 2 * shape.kv_dim * shape.n_layer * batch * shape.bytes_per_scalar


def crossover_tokens(shape: ModelShape, weight_bytes: int, batch: int = 1) -> int:
    """Smallest total token count at which the cache reaches ``weight_bytes``.

    Exact integer arithmetic: ceil(weight_bytes / per-token bytes).
    """
    if weight_bytes <= 0:
        raise ValueError("weight_bytes must be positive")
    per_token = per_token_bytes(shape, batch)
    return -(-weight_bytes // per_token)


def config_to_dict(shape: ModelShape, cfg: SimConfig) -> dict:
    """Serialize shape + workload to the flat JSON config document."""
    return {
        "n_layer": shape.n_layer,
        "d_model": shape.d_model,
        "n_heads": shape.n_heads,
        "kv_dim": shape.kv_dim,
        "bytes_per_scalar": shape.bytes_per_scalar,
        "max_context": shape.max_context,
        "prompt_len": cfg.prompt_len,
        "gen_len": cfg.gen_len,
        "batch": cfg.batch,
        "seed": cfg.seed,
    }


def config_from_dict(doc: dict) -> tuple[ModelShape, SimConfig]:
    """Parse the flat JSON config document.

    ``kv_dim`` may be omitted (defaults to d_model).  Unknown keys are
    ignored so the same document can carry toy-model extras.
    """
    missing = [k for k in _CONFIG_KEYS if k != "kv_dim" and k not in doc]
    if missing:
        raise ConfigError(f"config missing required keys: {', '.join(missing)}")
    try:
        shape = ModelShape(
            n_layer=int(doc["n_layer"]),
            d_model=int(doc["d_model"]),
            n_heads=int(doc["n_heads"]),
            kv_dim=int(doc["kv_dim"]) if doc.get("kv_dim") is not None else None,
            bytes_per_scalar=int(doc["bytes_per_scalar"]),
            max_context=int(doc["max_context"]),
        )
        cfg = SimConfig(
            prompt_len=int(doc["prompt_len"]),
            gen_len=int(doc["gen_len"]),
            batch=int(doc["batch"]),
            seed=int(doc["seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return shape, cfg


def load_config(path: str | Path) -> tuple[ModelShape, SimConfig]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return config_from_dict(doc)
