"""Independent oracles used by the test suite.

These deliberately avoid the production code paths: clustering is checked
by naive enumeration over contiguous partitions (no prefix sums), and
eviction by exhaustive search over all subsets of the retained positions.
"""

from __future__ import annotations

import math
from itertools import combinations


def naive_best_3_clustering(values: list[float]) -> float:
    """Minimum within-cluster sum of squares over contiguous 3-partitions.

    Sorts the values and tries every (i, j) split, recomputing each
    cluster's mean and SSE from scratch.
    """

    def sse(chunk: list[float]) -> float:
        mean = sum(chunk) / len(chunk)
        return sum((x - mean) ** 2 for x in chunk)

    data = sorted(values)
    n = len(data)
    best = math.inf
    for i in range(1, n - 1):
        for j in range(i + 1, n):
            cost = sse(data[:i]) + sse(data[i:j]) + sse(data[j:n])
            best = min(best, cost)
    return best


def partition_wcss(values: list[float], groups: list[list[int]]) -> float:
    """Within-cluster sum of squares of an explicit layer partition."""
    total = 0.0
    for members in groups:
        if not members:
            continue
        mean = sum(values[i] for i in members) / len(members)
        total += sum((values[i] - mean) ** 2 for i in members)
    return total


def brute_force_evict(
    kind: str,
    positions: list[int],
    scores: dict[int, float],
    budget: int,
    n_sink: int = 4,
    recent_fraction: float = 0.5,
) -> list[int]:
    """Exhaustive-search optimum of each policy's selection rule.

    Subsets are ranked by a per-policy objective tuple; the stated
    tie-breaks (recency, then score ties toward the larger position) are
    encoded in the tuple ordering.
    """
    positions = sorted(positions)
    keep = min(budget, len(positions))
    if len(positions) <= budget:
        return positions

    if kind == "h2o":
        recent_count = math.floor(budget * recent_fraction + 1e-9)
        recent = set(positions[len(positions) - recent_count:]) if recent_count else set()
    else:
        recent = set()

    def objective(subset: tuple[int, ...]):
        if kind == "sliding_window":
            return tuple(sorted(subset, reverse=True))
        if kind == "streaming":
            sinks = sum(1 for p in subset if p < n_sink)
            return (sinks, tuple(sorted(subset, reverse=True)))
        heavy = sorted(
            ((scores[p], p) for p in subset if p not in recent), reverse=True
        )
        return (recent.issubset(subset), tuple(heavy))

    best = max(combinations(positions, keep), key=objective)
    return sorted(best)
