"""Sequence-wise cache compressors, each run per layer on that layer's budget.

Three policies:

- ``sliding_window``: keep the most recent tokens.
- ``streaming``: keep the first ``n_sink`` tokens (attention sinks) plus
  the most recent tokens.
- ``h2o``: keep a recent window plus the "heavy hitters", the tokens with
  the highest accumulated attention scores.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .errors import BudgetFloorError
from .kvmodel import LayerCache

__all__ = ["POLICY_KINDS", "EvictionPolicy", "evict", "accumulate_scores"]

POLICY_KINDS = ("sliding_window", "streaming", "h2o")

_ROW_SUM_TOLERANCE = 1e-5
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class EvictionPolicy:
    """Eviction policy selector plus its per-kind parameters.

    ``n_sink`` applies to ``streaming`` only; ``recent_fraction`` (the share
    of the budget reserved for the recent window) applies to ``h2o`` only.
    """

    kind: str
    n_sink: int = 4
    recent_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}, expected one of {POLICY_KINDS}")
        if self.n_sink < 0:
            raise ValueError(f"n_sink must be >= 0, got {self.n_sink}")
        if not 0.0 < self.recent_fraction < 1.0:
            raise ValueError(f"recent_fraction must be in (0, 1), got {self.recent_fraction}")

    @property
    def floor(self) -> int:
        """Smallest budget the policy can operate with."""
        if self.kind == "streaming":
            return self.n_sink + 1
        if self.kind == "h2o":
            return 2
        return 1

    def to_dict(self) -> dict:
        doc: dict = {"policy": self.kind}
        if self.kind == "streaming":
            doc["n_sink"] = self.n_sink
        if self.kind == "h2o":
            doc["recent_fraction"] = self.recent_fraction
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EvictionPolicy":
        kwargs: dict = {}
        if "n_sink" in doc:
            kwargs["n_sink"] = int(doc["n_sink"])
        if "recent_fraction" in doc:
            kwargs["recent_fraction"] = float(doc["recent_fraction"])
        return cls(kind=doc["policy"], **kwargs)


def _select_sliding(positions: list[int], budget: int) -> list[int]:
    return positions[-budget:]


def _select_streaming(positions: list[int], budget: int, n_sink: int) -> list[int]:
    # positions are sorted, so present sinks form a prefix
    sinks = [p for p in positions if p < n_sink]
    rest = positions[len(sinks):]
    take = budget - len(sinks)
    return sinks + rest[len(rest) - take:]


def _select_h2o(
    positions: list[int], scores: dict[int, float], budget: int, recent_fraction: float
) -> list[int]:
    recent_count = math.floor(budget * recent_fraction + _FLOOR_EPS)
    recent = positions[len(positions) - recent_count:] if recent_count else []
    candidates = positions[: len(positions) - recent_count]
    # score ties break toward the larger (more recent) position
    heavy = heapq.nlargest(budget - recent_count, candidates, key=lambda p: (scores[p], p))
    return sorted(heavy + recent)


def evict(policy: EvictionPolicy, cache_layer: LayerCache, budget: int) -> list[int]:
    """Shrink one layer's cache to ``budget`` retained positions.

    No-op when the layer already fits.  Mutates ``cache_layer`` (evicted
    positions lose their score entries permanently) and returns the sorted
    retained positions.  Idempotent for a fixed budget.

    Raises:
        BudgetFloorError: budget below the policy's floor.
    """
    if budget < policy.floor:
        raise BudgetFloorError(
            f"budget {budget} below {policy.kind} floor {policy.floor}"
        )
    positions = cache_layer.positions
    if len(positions) <= budget:
        return list(positions)

    if policy.kind == "sliding_window":
        retained = _select_sliding(positions, budget)
    elif policy.kind == "streaming":
        retained = _select_streaming(positions, budget, policy.n_sink)
    else:
        retained = _select_h2o(positions, cache_layer.scores, budget, policy.recent_fraction)

    cache_layer.positions = retained
    cache_layer.scores = {p: cache_layer.scores[p] for p in retained}
    return list(retained)


def accumulate_scores(cache_layer: LayerCache, attention_row) -> dict[int, float]:
    """Add one attention probability row onto the retained positions' scores.

    The row is indexed in retained-position order and must be a probability
    distribution (nonnegative, summing to 1 within 1e-5).

    Returns the updated score mapping.
    """
    row = [float(x) for x in attention_row]
    if len(row) != len(cache_layer.positions):
        raise ValueError(
            f"attention row has {len(row)} entries for {len(cache_layer.positions)} retained positions"
        )
    if any(x < 0.0 for x in row):
        raise ValueError("attention probabilities must be nonnegative")
    total = sum(row)
    if abs(total - 1.0) > _ROW_SUM_TOLERANCE:
        raise ValueError(f"attention row sums to {total}, expected 1 within {_ROW_SUM_TOLERANCE}")
    for position, probability in zip(cache_layer.positions, row):
        cache_layer.scores[position] += probability
    return cache_layer.scores
