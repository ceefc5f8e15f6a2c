"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL
line per criterion.
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from click.testing import CliRunner

from kvsqueeze import (
    BudgetPlan,
    EvictionPolicy,
    LayerCache,
    LayerGroups,
    ModelShape,
    SimConfig,
    ToyModelSpec,
    allocate_budgets,
    cluster_layers,
    evict,
    kv_cache_bytes,
    crossover_tokens,
    make_planted_trace,
    profile_layers,
    random_prompt,
    simulate_decode,
)
from kvsqueeze.cli import main

from .oracles import brute_force_evict, naive_best_3_clustering, partition_wcss


@contextmanager
def criterion(name: str, budget_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    elapsed = time.perf_counter() - start
    if elapsed > budget_seconds:
        print(f"FAIL: {name} (took {elapsed:.3f}s, budget {budget_seconds}s)")
        pytest.fail(f"{name} exceeded time budget: {elapsed:.3f}s > {budget_seconds}s")
    print(f"PASS: {name} ({elapsed:.3f}s)")


def _split_groups(n, donors):
    receivers = [i for i in range(n - donors)]
    half = len(receivers) // 2
    return LayerGroups(
        g1=receivers[:half], g2=receivers[half:], g3=list(range(n - donors, n)),
        centroids=(0.1, 0.5, 0.9),
    )


def test_allocation_worked_example():
    groups = _split_groups(32, 14)
    with criterion("allocation worked example (300 / 1544, exact)", 0.001):
        plan = allocate_budgets(groups, b_init=1000, squeeze_ratio=0.3)
    assert all(plan.budgets[i] == 1544 for i in range(18))
    assert all(plan.budgets[i] == 300 for i in range(18, 32))


def test_memory_model():
    with criterion("memory model (0.5 MB/token, 28K crossover)", 0.001):
        shape = ModelShape(n_layer=32, d_model=4096, n_heads=32, bytes_per_scalar=2)
        per_token = kv_cache_bytes(shape, SimConfig(prompt_len=1, gen_len=0, batch=1))
        tokens = crossover_tokens(shape, 14 * 2**30)
    assert per_token == 524_288
    assert 26_000 <= tokens <= 30_000


def test_eviction_oracle():
    with criterion("eviction oracle (500 cases x 3 policies, exact sets)", 10.0):
        for kind in ("sliding_window", "streaming", "h2o"):
            for case in range(500):
                rng = np.random.default_rng(10_000 + case)
                n = int(rng.integers(1, 13))
                positions = sorted(rng.choice(24, size=n, replace=False).tolist())
                scores = {p: float(rng.uniform(0, 10)) for p in positions}
                policy = EvictionPolicy(
                    kind,
                    n_sink=int(rng.integers(0, 5)) if kind == "streaming" else 4,
                    recent_fraction=float(rng.uniform(0.1, 0.9)) if kind == "h2o" else 0.5,
                )
                budget = int(rng.integers(policy.floor, 13))
                layer = LayerCache(budget=budget, positions=list(positions),
                                   scores=dict(scores))
                got = evict(policy, layer, budget)
                expected = brute_force_evict(
                    kind, positions, scores, budget,
                    n_sink=policy.n_sink, recent_fraction=policy.recent_fraction,
                )
                assert got == expected, (kind, case, positions, scores, budget)


def test_clustering_oracle():
    from kvsqueeze import CosineProfile

    with criterion("clustering oracle (200 profiles vs DP optimum, 1e-9)", 5.0):
        sizes = [12, 32, 80]
        for case in range(200):
            rng = np.random.default_rng(20_000 + case)
            n = sizes[case % 3]
            values = rng.random(n).tolist()
            groups = cluster_layers(CosineProfile(mean_cos=values, prompt_len=4))
            got = partition_wcss(values, [groups.g1, groups.g2, groups.g3])
            best = naive_best_3_clustering(values)
            assert abs(got - best) <= 1e-9 * max(best, 1.0), (case, n)


def test_planted_importance_recovery():
    with criterion("planted-importance recovery (9 traces, exact g3)", 5.0):
        planted_sets = [{0, 1, 2, 3}, {2, 3, 8, 9}, {0, 5, 6, 10, 11}]
        for seed in (0, 1, 2):
            for important in planted_sets:
                trace = make_planted_trace(12, 48, 12, important_set=important, seed=seed)
                groups = cluster_layers(profile_layers(trace))
                assert set(groups.g3) == set(range(12)) - important
                plan = allocate_budgets(groups, b_init=1000, squeeze_ratio=0.4)
                total = sum(plan.budgets)
                assert 12 * 1000 - 12 < total <= 12 * 1000


def test_full_cache_equivalence():
    with criterion("full-cache equivalence (hidden 1e-6, mass == 1.0)", 5.0):
        spec = ToyModelSpec(
            shape=ModelShape(n_layer=4, d_model=64, n_heads=4, max_context=128),
            seed=21, vocab=96,
        )
        prompt = random_prompt(spec.vocab, 32, seed=21)
        plan = BudgetPlan(
            b_init=64, squeeze_ratio=1.0, budgets=[64] * 4,
            groups=_split_groups(4, 1),
        )
        policy = EvictionPolicy("sliding_window")
        full = simulate_decode(spec, prompt, None, policy, 32, mode="full")
        squeeze = simulate_decode(spec, prompt, plan, policy, 32, mode="squeeze")
        assert np.allclose(squeeze.final_hidden, full.final_hidden, rtol=1e-6)
        assert squeeze.fingerprint == full.fingerprint
        for record in squeeze.steps:
            assert record.mass_retained == [1.0] * 4


def test_memory_series_oracle():
    with criterion("memory series vs shadow counter; squeeze peak < full peak", 10.0):
        shape = ModelShape(n_layer=4, d_model=64, n_heads=4, max_context=128)
        spec = ToyModelSpec(shape=shape, seed=22, vocab=96)
        prompt_len, gen_len = 40, 20
        prompt = random_prompt(spec.vocab, prompt_len, seed=22)
        b_init = prompt_len // 5  # the 20%-of-prompt operating point
        plan = BudgetPlan(
            b_init=b_init, squeeze_ratio=1.0, budgets=[b_init] * 4,
            groups=_split_groups(4, 1),
        )
        policy = EvictionPolicy("sliding_window")
        squeeze = simulate_decode(spec, prompt, plan, policy, gen_len, mode="squeeze")
        full = simulate_decode(spec, prompt, None, policy, gen_len, mode="full")

        # shadow per-entry counter: sliding-window count recurrence per layer
        per_entry = 2 * shape.kv_dim * shape.bytes_per_scalar
        counts = [prompt_len] * 4
        for record in squeeze.steps:
            if record.step > 0:
                counts = [min(c, b) + 1 for c, b in zip(counts, [b_init] * 4)]
            assert record.retained == counts
            assert record.total_bytes == per_entry * sum(counts)
        assert squeeze.peak_bytes < full.peak_bytes


def test_sweep_structure(tmp_path):
    with criterion("sweep: 10 rows, all budget-conserving", 30.0):
        config = {
            "n_layer": 8, "d_model": 64, "n_heads": 4, "kv_dim": 64,
            "bytes_per_scalar": 2, "max_context": 256,
            "prompt_len": 64, "gen_len": 16, "batch": 1, "seed": 23,
            "vocab": 128, "weight_scale": 0.1,
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        ratios = ",".join(f"{r / 10:.1f}" for r in range(1, 11))
        result = CliRunner().invoke(main, [
            "sweep", "--config", str(config_path), "--squeeze-ratios", ratios,
            "--b-init", "20", "--out-dir", str(tmp_path),
        ])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        data = lines[2:]
        assert len(data) == 10
        header = lines[1].split(",")
        for line in data:
            row = dict(zip(header, line.split(",")))
            total, cap = int(row["total_budget"]), int(row["budget_cap"])
            assert cap - config["n_layer"] < total <= cap


def test_manifest_rerun_determinism(tmp_path):
    with criterion("determinism: rerun produces byte-identical artifacts", 30.0):
        config = {
            "n_layer": 4, "d_model": 32, "n_heads": 4, "kv_dim": 32,
            "bytes_per_scalar": 2, "max_context": 128,
            "prompt_len": 16, "gen_len": 8, "batch": 1, "seed": 29,
            "vocab": 64, "weight_scale": 0.1,
        }
        runner = CliRunner()
        outputs = {}
        for run in ("one", "two"):
            d = tmp_path / run
            d.mkdir()
            config_path = d / "config.json"
            config_path.write_text(json.dumps(config))
            for args in (
                ["profile", "--config", str(config_path), "--out-dir", str(d)],
                ["plan", "--profile", str(d / "profile.json"), "--b-init", "5",
                 "--squeeze-ratio", "0.5", "--out-dir", str(d)],
                ["simulate", "--config", str(config_path), "--plan", str(d / "plan.json"),
                 "--policy", "h2o", "--mode", "squeeze", "--out-dir", str(d)],
                ["sweep", "--config", str(config_path), "--squeeze-ratios", "0.4,0.8",
                 "--b-init", "5", "--out-dir", str(d)],
            ):
                result = runner.invoke(main, args)
                assert result.exit_code == 0, f"{args}: {result.output}"
            outputs[run] = {
                name: (d / name).read_bytes().replace(str(d).encode(), b"DIR")
                for name in ("profile.json", "plan.json", "sim.json", "sim.csv", "sweep.csv")
            }
        assert outputs["one"] == outputs["two"]
