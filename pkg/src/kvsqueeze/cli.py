"""Command-line front end: profile, plan, simulate, sweep, report.

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 constraint
violation (budget floors, impossible allocations).
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import click

from . import __version__
from .errors import (
    AllocationError,
    BudgetFloorError,
    ByteOverflowError,
    ConfigError,
    DegenerateTraceError,
    TraceFormatError,
    UnsupportedModelError,
)
from .eviction import EvictionPolicy
from .grouping import BudgetPlan, LayerGroups, allocate_budgets, cluster_layers
from .kvmodel import SimConfig, config_from_dict
from .manifest import RunManifest, write_csv_artifact, write_json_artifact
from .profiling import CosineProfile, profile_layers
from .simulator import SIM_MODES, ToyModelSpec, random_prompt, simulate_decode, toy_prefill
from .traceio import load_trace

_FORMAT_ERRORS = (ConfigError, TraceFormatError, DegenerateTraceError)
_CONSTRAINT_ERRORS = (
    AllocationError,
    BudgetFloorError,
    UnsupportedModelError,
    ByteOverflowError,
    ValueError,
)


@contextmanager
def _exit_codes():
    try:
        yield
    except _FORMAT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except FileNotFoundError as exc:
        path = exc.filename if exc.filename else exc
        click.echo(f"error: missing input file: {path}", err=True)
        sys.exit(3)
    except _CONSTRAINT_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(4)


def _load_json(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    return doc


def _toy_spec(doc: dict, seed_override: int | None = None) -> tuple[ToyModelSpec, SimConfig]:
    shape, cfg = config_from_dict(doc)
    if seed_override is not None:
        cfg = SimConfig(prompt_len=cfg.prompt_len, gen_len=cfg.gen_len,
                        batch=cfg.batch, seed=seed_override)
    try:
        spec = ToyModelSpec(
            shape=shape,
            seed=cfg.seed,
            weight_scale=float(doc.get("weight_scale", 0.1)),
            vocab=int(doc.get("vocab", 256)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid toy-model config: {exc}") from exc
    return spec, cfg


def _policy_from_flags(policy: str, n_sink: int, recent_fraction: float) -> EvictionPolicy:
    return EvictionPolicy(kind=policy, n_sink=n_sink, recent_fraction=recent_fraction)


def _resolve_b_init(b_init: int | None, budget: float | None, prompt_len: int) -> int:
    if (b_init is None) == (budget is None):
        raise click.UsageError("provide exactly one of --b-init or --budget")
    if b_init is not None:
        if b_init < 1:
            raise click.UsageError("--b-init must be >= 1")
        return b_init
    if not 0.0 < budget <= 1.0:
        raise click.UsageError("--budget must be a fraction in (0, 1]")
    return max(1, math.floor(budget * prompt_len))


def _params() -> dict:
    """JSON-safe snapshot of the current command's resolved parameters."""
    ctx = click.get_current_context()
    out = {}
    for key, value in sorted(ctx.params.items()):
        if isinstance(value, Path):
            out[key] = str(value)
        elif isinstance(value, tuple):
            out[key] = [str(v) for v in value]
        else:
            out[key] = value
    return out


@click.group()
@click.version_option(version=__version__, prog_name="kvsqueeze")
def main() -> None:
    """2-D KV-cache compression: profile layers, plan budgets, simulate eviction."""


@main.command("profile")
@click.option("--trace", "trace_path", type=click.Path(path_type=Path), default=None,
              help="Profile an existing trace file.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Toy-model config JSON; runs a seeded prefill and profiles it.")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Output profile JSON path (default <out-dir>/profile.json).")
@click.option("--seed", type=int, default=None,
              help="Override the config seed; drives prompt and weight randomness.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."),
              show_default=True)
@click.option("--timestamp", default=None, help="Optional timestamp recorded in the manifest.")
def cmd_profile(trace_path: Path | None, config_path: Path | None, out: Path | None,
                seed: int | None, out_dir: Path, timestamp: str | None) -> None:
    """Compute per-layer mean cosine similarity from a trace or a toy run."""
    if (trace_path is None) == (config_path is None):
        raise click.UsageError("provide exactly one of --trace or --config")
    with _exit_codes():
        if trace_path is not None:
            seed = None
            trace = load_trace(trace_path)
            inputs = {"trace": str(trace_path)}
        else:
            doc = _load_json(config_path)
            spec, cfg = _toy_spec(doc, seed_override=seed)
            seed = cfg.seed
            prompt = random_prompt(spec.vocab, cfg.prompt_len, cfg.seed)
            trace = toy_prefill(spec, prompt).trace
            inputs = {"config": str(config_path)}
        profile = profile_layers(trace)

        out_dir.mkdir(parents=True, exist_ok=True)
        out = out if out is not None else out_dir / "profile.json"
        manifest = RunManifest(
            command="profile",
            params=_params(),
            inputs=inputs,
            outputs={"profile": str(out)},
            seed=seed,
            version=__version__,
            timestamp=timestamp,
        )
        write_json_artifact(out, profile.to_dict(), manifest)
        click.echo(f"wrote {out}")


@main.command("plan")
@click.option("--profile", "profile_path", type=click.Path(path_type=Path), required=True)
@click.option("--b-init", type=int, default=None, help="Uniform per-layer budget in tokens.")
@click.option("--budget", type=float, default=None,
              help="Uniform budget as a fraction of prompt length.")
@click.option("--squeeze-ratio", type=click.FloatRange(0.05, 1.0), default=0.4,
              show_default=True, help="Fraction of budget the low-importance group keeps.")
@click.option("--groups", "groups_path", type=click.Path(path_type=Path), default=None,
              help="JSON with explicit g1/g2/g3 layer lists, bypassing clustering.")
@click.option("--min-budget", type=int, default=1, show_default=True,
              help="Reject plans whose budgets fall below this floor.")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."), show_default=True)
@click.option("--timestamp", default=None)
def cmd_plan(profile_path: Path, b_init: int | None, budget: float | None,
             squeeze_ratio: float, groups_path: Path | None, min_budget: int,
             out: Path | None, out_dir: Path, timestamp: str | None) -> None:
    """Cluster layers by importance and reallocate per-layer budgets."""
    with _exit_codes():
        profile = CosineProfile.from_dict(_load_json(profile_path), source=str(profile_path))
        resolved_b_init = _resolve_b_init(b_init, budget, profile.prompt_len)
        if groups_path is not None:
            doc = _load_json(groups_path)
            groups = _groups_from_profile(doc, profile)
        else:
            groups = cluster_layers(profile)
        plan = allocate_budgets(groups, resolved_b_init, squeeze_ratio, min_budget=min_budget)

        out_dir.mkdir(parents=True, exist_ok=True)
        out = out if out is not None else out_dir / "plan.json"
        inputs = {"profile": str(profile_path)}
        if groups_path is not None:
            inputs["groups"] = str(groups_path)
        manifest = RunManifest(
            command="plan",
            params=_params(),
            inputs=inputs,
            outputs={"plan": str(out)},
            version=__version__,
            timestamp=timestamp,
        )
        write_json_artifact(out, plan.to_dict(), manifest)
        click.echo(f"wrote {out}")


def _groups_from_profile(doc: dict, profile: CosineProfile) -> LayerGroups:
    try:
        g1 = [int(i) for i in doc["g1"]]
        g2 = [int(i) for i in doc["g2"]]
        g3 = [int(i) for i in doc["g3"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"groups file must define integer lists g1, g2, g3: {exc}") from exc
    means = profile.mean_cos

    def centroid(members: list[int]) -> float:
        return sum(means[i] for i in members) / len(members) if members else 0.0

    groups = LayerGroups(
        g1=sorted(g1), g2=sorted(g2), g3=sorted(g3),
        centroids=(centroid(g1), centroid(g2), centroid(g3)),
        degenerate=True,  # explicit groups skip the strict-centroid check
    )
    if sorted(g1 + g2 + g3) != list(range(profile.n_layer)):
        raise ConfigError("groups must partition the profile's layers exactly")
    return groups


@main.command("simulate")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--plan", "plan_path", type=click.Path(path_type=Path), default=None,
              help="Budget plan JSON (required for squeeze/uniform modes).")
@click.option("--policy", type=click.Choice(["sliding_window", "streaming", "h2o"]),
              default="sliding_window", show_default=True)
@click.option("--n-sink", type=int, default=4, show_default=True)
@click.option("--recent-fraction", type=float, default=0.5, show_default=True)
@click.option("--gen-len", type=int, default=None,
              help="Decode steps (default: gen_len from the config).")
@click.option("--mode", type=click.Choice(list(SIM_MODES)), default="squeeze", show_default=True)
@click.option("--seed", type=int, default=None,
              help="Override the config seed; drives prompt and weight randomness.")
@click.option("--name", default="sim", show_default=True, help="Output artifact basename.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."), show_default=True)
@click.option("--timestamp", default=None)
def cmd_simulate(config_path: Path, plan_path: Path | None, policy: str, n_sink: int,
                 recent_fraction: float, gen_len: int | None, mode: str, seed: int | None,
                 name: str, out_dir: Path, timestamp: str | None) -> None:
    """Decode with per-layer eviction, reporting memory and quality proxies."""
    if mode != "full" and plan_path is None:
        raise click.UsageError(f"mode {mode!r} requires --plan")
    with _exit_codes():
        doc = _load_json(config_path)
        spec, cfg = _toy_spec(doc, seed_override=seed)
        plan = BudgetPlan.from_dict(_load_json(plan_path)) if plan_path is not None else None
        pol = _policy_from_flags(policy, n_sink, recent_fraction)
        steps = gen_len if gen_len is not None else cfg.gen_len
        prompt = random_prompt(spec.vocab, cfg.prompt_len, cfg.seed)
        report = simulate_decode(spec, prompt, plan, pol, steps, mode=mode, batch=cfg.batch)

        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{name}.json"
        csv_path = out_dir / f"{name}.csv"
        inputs = {"config": str(config_path)}
        if plan_path is not None:
            inputs["plan"] = str(plan_path)
        manifest = RunManifest(
            command="simulate",
            params=_params(),
            inputs=inputs,
            outputs={"report": str(json_path), "csv": str(csv_path)},
            seed=cfg.seed,
            version=__version__,
            timestamp=timestamp,
        )
        write_json_artifact(json_path, report.to_dict(), manifest)
        write_csv_artifact(
            csv_path,
            ["step", "layer", "retained", "bytes", "mass_retained"],
            report.csv_rows(),
            manifest,
        )
        click.echo(f"wrote {json_path} and {csv_path}")


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--policy", type=click.Choice(["sliding_window", "streaming", "h2o"]),
              default="sliding_window", show_default=True)
@click.option("--n-sink", type=int, default=4, show_default=True)
@click.option("--recent-fraction", type=float, default=0.5, show_default=True)
@click.option("--squeeze-ratios", default=None,
              help="Comma-separated squeeze ratios, one sweep row each.")
@click.option("--b-inits", default=None,
              help="Comma-separated uniform budgets, one sweep row each.")
@click.option("--b-init", type=int, default=None,
              help="Base budget when sweeping squeeze ratios.")
@click.option("--budget", type=float, default=None,
              help="Base budget as a fraction of prompt length.")
@click.option("--squeeze-ratio", type=click.FloatRange(0.05, 1.0), default=0.4,
              show_default=True, help="Ratio used when sweeping budgets.")
@click.option("--gen-len", type=int, default=None)
@click.option("--seed", type=int, default=None,
              help="Override the config seed; drives prompt and weight randomness.")
@click.option("--jobs", type=int, default=4, show_default=True)
@click.option("--name", default="sweep", show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."), show_default=True)
@click.option("--timestamp", default=None)
def cmd_sweep(config_path: Path, policy: str, n_sink: int, recent_fraction: float,
              squeeze_ratios: str | None, b_inits: str | None, b_init: int | None,
              budget: float | None, squeeze_ratio: float, gen_len: int | None,
              seed: int | None, jobs: int, name: str, out_dir: Path,
              timestamp: str | None) -> None:
    """One profiled run, many plans: a CSV row of proxy metrics per setting."""
    if (squeeze_ratios is None) == (b_inits is None):
        raise click.UsageError("provide exactly one of --squeeze-ratios or --b-inits")
    with _exit_codes():
        doc = _load_json(config_path)
        spec, cfg = _toy_spec(doc, seed_override=seed)
        pol = _policy_from_flags(policy, n_sink, recent_fraction)
        steps = gen_len if gen_len is not None else cfg.gen_len
        prompt = random_prompt(spec.vocab, cfg.prompt_len, cfg.seed)
        profile = profile_layers(toy_prefill(spec, prompt).trace)
        groups = cluster_layers(profile)

        if squeeze_ratios is not None:
            ratios = [float(r) for r in squeeze_ratios.split(",") if r.strip()]
            base = _resolve_b_init(b_init, budget, cfg.prompt_len)
            settings = [(base, r) for r in ratios]
        else:
            bases = [int(b) for b in b_inits.split(",") if b.strip()]
            settings = [(b, squeeze_ratio) for b in bases]

        plans = [
            allocate_budgets(groups, base, ratio, min_budget=pol.floor)
            for base, ratio in settings
        ]

        def run(plan: BudgetPlan):
            return simulate_decode(
                spec, prompt, plan, pol, steps, mode="squeeze", batch=cfg.batch
            )

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            reports = list(pool.map(run, plans))

        rows = []
        for (base, ratio), plan, report in zip(settings, plans, reports):
            decode_steps = report.steps[1:] or report.steps
            masses = [m for s in decode_steps for m in s.mass_retained]
            rows.append(
                (
                    ratio,
                    base,
                    sum(plan.budgets),
                    plan.n_layer * base,
                    report.peak_bytes,
                    report.steps[-1].total_bytes,
                    sum(masses) / len(masses),
                    min(masses),
                    report.fingerprint,
                )
            )

        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{name}.csv"
        manifest = RunManifest(
            command="sweep",
            params=_params(),
            inputs={"config": str(config_path)},
            outputs={"table": str(csv_path)},
            seed=cfg.seed,
            version=__version__,
            timestamp=timestamp,
        )
        write_csv_artifact(
            csv_path,
            [
                "squeeze_ratio",
                "b_init",
                "total_budget",
                "budget_cap",
                "peak_bytes",
                "final_bytes",
                "mean_mass_retained",
                "min_mass_retained",
                "fingerprint",
            ],
            rows,
            manifest,
        )
        click.echo(f"wrote {csv_path}")


@main.command("report")
@click.argument("reports", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--name", default="comparison", show_default=True)
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."), show_default=True)
@click.option("--timestamp", default=None)
def cmd_report(reports: tuple[Path, ...], name: str, out_dir: Path,
               timestamp: str | None) -> None:
    """Merge simulation reports into per-step memory/quality comparison tables."""
    with _exit_codes():
        loaded = []
        for path in reports:
            doc = _load_json(path)
            if "steps" not in doc:
                raise ConfigError(f"{path}: not a simulation report (no steps)")
            loaded.append((path, doc))

        labels = []
        for path, doc in loaded:
            label = f"{path.stem}_{doc.get('mode', 'unknown')}"
            while label in labels:
                label += "_"
            labels.append(label)

        max_steps = max(len(doc["steps"]) for _, doc in loaded)
        bytes_rows, mass_rows = [], []
        for step in range(max_steps):
            brow: list = [step]
            mrow: list = [step]
            for _, doc in loaded:
                if step < len(doc["steps"]):
                    record = doc["steps"][step]
                    brow.append(record["total_bytes"])
                    masses = record["mass_retained"]
                    mrow.append(sum(masses) / len(masses))
                else:
                    brow.append("")
                    mrow.append("")
            bytes_rows.append(tuple(brow))
            mass_rows.append(tuple(mrow))

        out_dir.mkdir(parents=True, exist_ok=True)
        bytes_path = out_dir / f"{name}_bytes.csv"
        mass_path = out_dir / f"{name}_mass.csv"
        manifest = RunManifest(
            command="report",
            params=_params(),
            inputs={f"report_{i}": str(p) for i, (p, _) in enumerate(loaded)},
            outputs={"bytes": str(bytes_path), "mass": str(mass_path)},
            version=__version__,
            timestamp=timestamp,
        )
        write_csv_artifact(bytes_path, ["step", *labels], bytes_rows, manifest)
        write_csv_artifact(mass_path, ["step", *labels], mass_rows, manifest)
        click.echo(f"wrote {bytes_path} and {mass_path}")


if __name__ == "__main__":
    main()
