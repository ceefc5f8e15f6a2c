import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvsqueeze import BudgetFloorError, EvictionPolicy, LayerCache, accumulate_scores, evict

from .oracles import brute_force_evict

SLIDING = EvictionPolicy("sliding_window")
STREAMING = EvictionPolicy("streaming", n_sink=4)
H2O = EvictionPolicy("h2o", recent_fraction=0.5)


def _layer(positions, scores=None, budget=1 << 20):
    positions = sorted(positions)
    scores = scores or {}
    return LayerCache(
        budget=budget,
        positions=list(positions),
        scores={p: float(scores.get(p, 0.0)) for p in positions},
    )


def test_sliding_window_definition():
    layer = _layer(range(10))
    assert evict(SLIDING, layer, 4) == [6, 7, 8, 9]
    assert layer.positions == [6, 7, 8, 9]


def test_streaming_definition():
    assert evict(STREAMING, _layer(range(10)), 6) == [0, 1, 2, 3, 8, 9]


def test_h2o_worked_example():
    scores = {0: 9, 1: 1, 2: 8, 3: 1, 4: 1, 5: 7, 6: 1, 7: 1}
    layer = _layer(range(8), scores)
    assert evict(H2O, layer, 4) == [0, 2, 6, 7]


def test_under_budget_unchanged():
    for policy in (SLIDING, STREAMING, H2O):
        layer = _layer(range(5))
        assert evict(policy, layer, 8) == [0, 1, 2, 3, 4]
        assert layer.positions == [0, 1, 2, 3, 4]


@pytest.mark.parametrize(
    "policy,floor",
    [(SLIDING, 1), (STREAMING, 5), (H2O, 2)],
)
def test_policy_floors(policy, floor):
    layer = _layer(range(10))
    with pytest.raises(BudgetFloorError):
        evict(policy, layer, floor - 1)
    assert len(evict(policy, _layer(range(10)), floor)) == floor


def test_eviction_discards_scores_permanently():
    layer = _layer(range(6), {p: p for p in range(6)})
    evict(SLIDING, layer, 3)
    assert set(layer.scores) == {3, 4, 5}


def test_streaming_with_missing_sinks_fills_budget():
    # sink 2 already gone: retained count must still reach the budget
    layer = _layer([0, 1, 3, 4, 5, 6, 7])
    assert evict(STREAMING, layer, 6) == [0, 1, 3, 5, 6, 7]


def test_streaming_zero_sinks_degenerates_to_sliding():
    no_sink = EvictionPolicy("streaming", n_sink=0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        positions = sorted(rng.choice(40, size=12, replace=False).tolist())
        budget = int(rng.integers(1, 12))
        a = evict(no_sink, _layer(positions), budget)
        b = evict(SLIDING, _layer(positions), budget)
        assert a == b


policies = st.sampled_from(["sliding_window", "streaming", "h2o"])


@st.composite
def cache_and_budget(draw):
    kind = draw(policies)
    n = draw(st.integers(1, 12))
    positions = sorted(draw(st.sets(st.integers(0, 30), min_size=n, max_size=n)))
    scores = {p: draw(st.floats(0, 10)) for p in positions}
    policy = EvictionPolicy(
        kind,
        n_sink=draw(st.integers(0, 4)) if kind == "streaming" else 4,
        recent_fraction=draw(st.floats(0.1, 0.9)) if kind == "h2o" else 0.5,
    )
    budget = draw(st.integers(policy.floor, 14))
    return policy, positions, scores, budget


@settings(deadline=None, max_examples=200)
@given(case=cache_and_budget())
def test_budget_compliance_and_subset(case):
    policy, positions, scores, budget = case
    layer = _layer(positions, scores)
    retained = evict(policy, layer, budget)
    assert len(retained) == min(budget, len(positions))
    assert set(retained).issubset(set(positions))
    assert retained == sorted(retained)


@settings(deadline=None, max_examples=200)
@given(case=cache_and_budget())
def test_idempotence(case):
    policy, positions, scores, budget = case
    layer = _layer(positions, scores)
    first = evict(policy, layer, budget)
    second = evict(policy, layer, budget)
    assert first == second == layer.positions


@settings(deadline=None, max_examples=200)
@given(case=cache_and_budget())
def test_matches_brute_force(case):
    policy, positions, scores, budget = case
    layer = _layer(positions, scores)
    got = evict(policy, layer, budget)
    expected = brute_force_evict(
        policy.kind, positions, scores, budget,
        n_sink=policy.n_sink, recent_fraction=policy.recent_fraction,
    )
    assert got == expected


@pytest.mark.parametrize("policy", [SLIDING, STREAMING])
def test_subset_monotonicity(policy):
    for seed in range(25):
        rng = np.random.default_rng(seed)
        positions = sorted(rng.choice(40, size=12, replace=False).tolist())
        for budget in range(policy.floor, 11):
            smaller = set(evict(policy, _layer(positions), budget))
            larger = set(evict(policy, _layer(positions), budget + 1))
            assert smaller < larger


def test_accumulate_uniform_row():
    layer = _layer(range(4))
    accumulate_scores(layer, [0.25] * 4)
    assert all(layer.scores[p] == 0.25 for p in range(4))


def test_accumulate_additivity():
    layer = _layer(range(4))
    accumulate_scores(layer, [0.25] * 4)
    accumulate_scores(layer, [0.25] * 4)
    assert all(layer.scores[p] == 0.5 for p in range(4))


def test_accumulate_matches_shadow_sum():
    rng = np.random.default_rng(12)
    layer = _layer(range(6))
    shadow = {p: 0.0 for p in range(6)}
    for _ in range(5):
        row = rng.dirichlet(np.ones(6))
        accumulate_scores(layer, row)
        for p, x in zip(range(6), row):
            shadow[p] += float(x)
    for p in range(6):
        assert layer.scores[p] == pytest.approx(shadow[p], abs=1e-12)


def test_accumulate_length_mismatch():
    with pytest.raises(ValueError, match="entries"):
        accumulate_scores(_layer(range(4)), [0.5, 0.5])


def test_accumulate_rejects_unnormalized():
    with pytest.raises(ValueError, match="sums to"):
        accumulate_scores(_layer(range(2)), [0.7, 0.7])


def test_accumulate_rejects_negative():
    with pytest.raises(ValueError, match="nonnegative"):
        accumulate_scores(_layer(range(2)), [1.5, -0.5])


def test_policy_validation():
    with pytest.raises(ValueError):
        EvictionPolicy("lru")
    with pytest.raises(ValueError):
        EvictionPolicy("streaming", n_sink=-1)
    with pytest.raises(ValueError):
        EvictionPolicy("h2o", recent_fraction=1.0)
