"""Layer grouping by importance and per-layer budget reallocation.

Layers cluster into three groups on their mean cosine similarity; the
highest-similarity group (g3) donates cache budget to the rest.  In one
dimension the optimal k-means clusters are contiguous in sorted order, so
the partition is found by an exact scan over split points and then
polished to a nearest-centroid fixed point (ties toward the lower
centroid).  Plain single-seed Lloyd iteration stalls in local optima on
roughly half of random profiles, which is why the exact scan runs first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllocationError, BudgetFloorError, UnsupportedModelError
from .profiling import CosineProfile

__all__ = ["LayerGroups", "BudgetPlan", "cluster_layers", "allocate_budgets"]

_MAX_POLISH_ITERATIONS = 100

# Guards floor() against binary float error on decimal inputs
# (e.g. 1000 * 0.29 must floor to 290, not 289).
_FLOOR_EPS = 1e-9


@dataclass
class LayerGroups:
    """Disjoint layer-index groups ordered by centroid: g3 has the largest.

    ``degenerate`` marks the contiguous-thirds fallback used when fewer
    than 3 distinct values exist; only there may centroids tie.
    """

    g1: list[int]
    g2: list[int]
    g3: list[int]
    centroids: tuple[float, float, float]
    degenerate: bool = False

    @property
    def n_layer(self) -> int:
        return len(self.g1) + len(self.g2) + len(self.g3)

    def group_index(self) -> dict[int, int]:
        """Map layer index -> group number (1, 2, or 3)."""
        out: dict[int, int] = {}
        for number, members in ((1, self.g1), (2, self.g2), (3, self.g3)):
            for layer in members:
                out[layer] = number
        return out

    def validate(self) -> None:
        all_members = self.g1 + self.g2 + self.g3
        if sorted(all_members) != list(range(self.n_layer)):
            raise ValueError("groups must partition layers 0..n_layer-1")
        c1, c2, c3 = self.centroids
        if not (c1 <= c2 <= c3):
            raise ValueError(f"centroids must be sorted ascending, got {self.centroids}")
        if not self.degenerate and not (c3 > c2 and c3 > c1):
            raise ValueError("g3 centroid must be strictly the largest")

    def to_dict(self) -> dict:
        return {"g1": self.g1, "g2": self.g2, "g3": self.g3}


@dataclass
class BudgetPlan:
    """Per-layer token budgets after reallocating from g3 to the rest."""

    b_init: int
    squeeze_ratio: float
    budgets: list[int]
    groups: LayerGroups

    @property
    def n_layer(self) -> int:
        return len(self.budgets)

    def validate(self) -> None:
        self.groups.validate()
        if len(self.budgets) != self.groups.n_layer:
            raise ValueError("budget count must match layer count")
        total = sum(self.budgets)
        cap = self.n_layer * self.b_init
        if not (cap - self.n_layer < total <= cap):
            raise ValueError(
                f"budget sum {total} outside rounding band ({cap - self.n_layer}, {cap}]"
            )

    def to_dict(self) -> dict:
        return {
            "b_init": self.b_init,
            "squeeze_ratio": self.squeeze_ratio,
            "groups": self.groups.to_dict(),
            "budgets": self.budgets,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BudgetPlan":
        groups_doc = doc["groups"]
        groups = LayerGroups(
            g1=[int(i) for i in groups_doc["g1"]],
            g2=[int(i) for i in groups_doc["g2"]],
            g3=[int(i) for i in groups_doc["g3"]],
            centroids=tuple(doc.get("centroids", (0.0, 0.0, 0.0))),
            degenerate=True,  # centroids are not serialized; skip strictness check
        )
        plan = cls(
            b_init=int(doc["b_init"]),
            squeeze_ratio=float(doc["squeeze_ratio"]),
            budgets=[int(b) for b in doc["budgets"]],
            groups=groups,
        )
        plan.validate()
        return plan


def _optimal_contiguous_split(sorted_values: np.ndarray) -> tuple[int, int]:
    """Split points (i, j) minimizing within-cluster sum of squares.

    Clusters are [0, i), [i, j), [j, n) over the sorted values.  Ties break
    toward the lexicographically smallest (i, j).
    """
    n = len(sorted_values)
    prefix = np.concatenate([[0.0], np.cumsum(sorted_values)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(sorted_values * sorted_values)])

    def segment_cost(lo: int, hi: int) -> float:
        s = prefix[hi] - prefix[lo]
        s2 = prefix_sq[hi] - prefix_sq[lo]
        return s2 - s * s / (hi - lo)

    best = (math.inf, 1, 2)
    for i in range(1, n - 1):
        left = segment_cost(0, i)
        if left >= best[0]:
            continue
        for j in range(i + 1, n):
            cost = left + segment_cost(i, j) + segment_cost(j, n)
            if cost < best[0]:
                best = (cost, i, j)
    return best[1], best[2]


def _nearest_centroid_fixed_point(
    values: np.ndarray, assignment: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iteration from a valid partition to an assignment fixed point.

    Ties in point-to-centroid distance break toward the lower centroid.
    Starting from the optimal partition's centroids this terminates in a
    step or two and cannot increase the objective.
    """
    assignment = assignment.copy()
    centroids = centroids.copy()
    for _ in range(_MAX_POLISH_ITERATIONS):
        distance = np.abs(values[:, None] - centroids[None, :])
        new_assignment = np.argmin(distance, axis=1)  # first minimum = lower centroid
        if np.array_equal(new_assignment, assignment):
            break
        if len(np.unique(new_assignment)) < 3:
            break  # tie shuffling drained a cluster; keep the previous valid state
        assignment = new_assignment
        for k in range(3):
            centroids[k] = values[assignment == k].mean()
        order = np.argsort(centroids, kind="stable")
        centroids = centroids[order]
        assignment = np.argsort(order, kind="stable")[assignment]
    return assignment, centroids


def cluster_layers(profile: CosineProfile) -> LayerGroups:
    """Partition layers into three groups by mean cosine similarity.

    Deterministic: identical profiles give identical groups.  With fewer
    than 3 distinct values, falls back to contiguous thirds of the layers
    sorted by value (stable, so equal values keep layer-index order).

    Raises:
        UnsupportedModelError: fewer than 3 layers.
    """
    n = profile.n_layer
    if n < 3:
        raise UnsupportedModelError(f"need at least 3 layers to form groups, got {n}")
    values = np.asarray(profile.mean_cos, dtype=np.float64)

    if len(np.unique(values)) < 3:
        order = np.argsort(values, kind="stable")
        chunks = np.array_split(order, 3)
        centroids = tuple(float(values[c].mean()) for c in chunks)
        groups = LayerGroups(
            g1=sorted(int(i) for i in chunks[0]),
            g2=sorted(int(i) for i in chunks[1]),
            g3=sorted(int(i) for i in chunks[2]),
            centroids=centroids,
            degenerate=True,
        )
        groups.validate()
        return groups

    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    i, j = _optimal_contiguous_split(sorted_values)
    seed_assignment = np.empty(n, dtype=np.intp)
    seed_assignment[order[:i]] = 0
    seed_assignment[order[i:j]] = 1
    seed_assignment[order[j:]] = 2
    seed_centroids = np.array(
        [
            sorted_values[:i].mean(),
            sorted_values[i:j].mean(),
            sorted_values[j:].mean(),
        ]
    )
    assignment, centroids = _nearest_centroid_fixed_point(
        values, seed_assignment, seed_centroids
    )

    members: list[list[int]] = [[], [], []]
    for layer, k in enumerate(assignment):
        members[int(k)].append(layer)
    groups = LayerGroups(
        g1=members[0],
        g2=members[1],
        g3=members[2],
        centroids=(float(centroids[0]), float(centroids[1]), float(centroids[2])),
    )
    groups.validate()
    return groups


def allocate_budgets(
    groups: LayerGroups,
    b_init: int,
    squeeze_ratio: float,
    min_budget: int = 1,
) -> BudgetPlan:
    """Reallocate the uniform budget: g3 layers shrink, the rest grow.

    g3 layers get floor(b_init * squeeze_ratio); every other layer gets
    floor((n_layer*b_init - |g3|*b_init*squeeze_ratio) / (|g1|+|g2|)).
    Rounding slack (< n_layer tokens) is dropped, never redistributed.

    Raises:
        AllocationError: g3 contains every layer, so there is nobody to
            donate budget to; lower k or run with uniform budgets.
        BudgetFloorError: a resulting budget falls below ``min_budget``.
    """
    if not 0.0 < squeeze_ratio <= 1.0:
        raise ValueError(f"squeeze_ratio must be in (0, 1], got {squeeze_ratio}")
    if b_init < 1:
        raise ValueError(f"b_init must be >= 1, got {b_init}")
    n = groups.n_layer
    donors = len(groups.g3)
    receivers = n - donors
    if receivers == 0:
        raise AllocationError(
            "every layer landed in g3; no layers are left to receive budget "
            "(lower k or use uniform budgets)"
        )

    squeezed = math.floor(b_init * squeeze_ratio + _FLOOR_EPS)
    raised = math.floor(
        (n * b_init - donors * b_init * squeeze_ratio) / receivers + _FLOOR_EPS
    )
    g3_set = set(groups.g3)
    budgets = [squeezed if layer in g3_set else raised for layer in range(n)]

    for layer, budget in enumerate(budgets):
        if budget < min_budget:
            raise BudgetFloorError(
                f"layer {layer} budget {budget} below policy floor {min_budget}"
            )

    plan = BudgetPlan(
        b_init=b_init, squeeze_ratio=squeeze_ratio, budgets=budgets, groups=groups
    )
    plan.validate()
    return plan
