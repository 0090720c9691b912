"""Command-line entry points.

Verbs: simulate, calibrate, benchmark, scenarios, timing, replay, serve.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import json
import statistics
import sys
import time
from pathlib import Path

import click

from . import calibration as calib
from . import scenarios as scen
from .engine import (
    ConfigError,
    TrialConfig,
    apply_cohort,
    init_trial,
    get_context,
    run_oc,
    simulate_trial,
)
from .inference import InferenceError
from .modelprior import NormalPrior
from .reporting import (
    RunManifest,
    load_config,
    write_benchmark_report,
    write_calibration_report,
    write_oc_report,
    write_timing_report,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CONFIG_ERRORS = (ConfigError, ValueError, KeyError, OSError, calib.CalibrationError)
_NUMERIC_ERRORS = (InferenceError, FloatingPointError, ArithmeticError)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _NUMERIC_ERRORS as exc:
        _fail(EXIT_NUMERIC, str(exc))
    except _CONFIG_ERRORS as exc:
        _fail(EXIT_CONFIG, str(exc))


def _load_scenarios(selector: str, ttl: float = 0.30) -> list[scen.Scenario]:
    if selector == "bundled":
        return scen.bundled_scenarios(ttl)
    path = Path(selector)
    if path.exists():
        return scen.load_scenarios(path)
    bundled = {s.label: s for s in scen.bundled_scenarios(ttl)}
    labels = [x.strip() for x in selector.split(",") if x.strip()]
    missing = [l for l in labels if l not in bundled]
    if missing or not labels:
        raise ValueError(f"unknown scenario selector {selector!r}")
    return [bundled[l] for l in labels]


@click.group()
def main():
    """Partial-ordering dose-combination escalation designs."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--scenarios", "selector", default="bundled", show_default=True,
              help="bundled, a scenario JSON file, or comma-separated bundled ids")
@click.option("--B", "-B", "B", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--out", default="simulate", show_default=True,
              help="output base path (CSV/JSON/figure suffixes added)")
def simulate(config_path, selector, B, seed, threads, out):
    """Monte Carlo operating characteristics over a scenario set."""
    config = _guard(load_config, config_path)
    scenarios = _guard(_load_scenarios, selector, config.ttl)
    manifest = RunManifest.create(
        "simulate", config, seed, [s.label for s in scenarios], B
    )
    results = [
        _guard(run_oc, config, s, B, seed=seed, threads=threads) for s in scenarios
    ]
    paths = write_oc_report(results, manifest, config, out)
    mean_pcs = sum(r.pcs for r in results) / len(results)
    click.echo(f"mean PCS {100 * mean_pcs:.1f}% over {len(results)} scenarios")
    for p in paths:
        click.echo(str(p))


def _default_template(design: str, randomised: bool) -> TrialConfig:
    common = dict(
        design=design,
        skeleton_p1=0.1,
        skeleton_nu=0.1,
        n_cohorts=15,
        m1=3,
        m2=1 if randomised else 0,
        randomised=randomised,
    )
    if design == "poblrm":
        return TrialConfig(prior=NormalPrior(0.0, 1.0, 5.0, 5.0), **common)
    return TrialConfig(crm_sigma=1.0, **common)


@main.command()
@click.option("--design", type=click.Choice(["poblrm", "pocrm"]), default="poblrm",
              show_default=True)
@click.option("--template", "template_path", type=click.Path(exists=True),
              help="trial config JSON used as the non-calibrated base")
@click.option("--grids", "grids_path", type=click.Path(exists=True),
              help="JSON mapping axis name to candidate values")
@click.option("--scenarios", "subset", default="full", show_default=True,
              help="full|pos2|pos4|pos5|ben2|ben4 or comma-separated bundled ids")
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--lambda", "lam", default=0.2, show_default=True,
              help="recorded trade-off weight for downstream score comparisons")
@click.option("--B", "-B", "B", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--mode", type=click.Choice(["cyclic", "grid"]), default="cyclic",
              show_default=True)
@click.option("--ci-formula", type=click.Choice(["wald", "paper"]), default="wald",
              show_default=True)
@click.option("--benchmark-n", default=45, show_default=True,
              help="patients per benchmark replication (ben subsets)")
@click.option("--out", default="calibrate", show_default=True)
def calibrate(design, template_path, grids_path, subset, alpha, lam, B, seed,
              threads, mode, ci_formula, benchmark_n, out):
    """Operational-prior search (cyclic coordinate search or grid search)."""
    template = (
        _guard(load_config, template_path)
        if template_path
        else _default_template(design, randomised=False)
    )
    if template.design != design:
        _fail(EXIT_CONFIG, "template design does not match --design")
    if grids_path:
        with open(grids_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        axes = tuple(
            (name, tuple(raw[name]))
            for name in (calib.AXES_POBLRM if design == "poblrm" else calib.AXES_POCRM)
        )
        grid = _guard(calib.ParameterGrid, design, axes)
    else:
        grid = calib.default_grid(design)
    all_scen = scen.bundled_scenarios(template.ttl)
    if subset in scen.SUBSET_METHODS:
        benchmark = None
        if subset.startswith("ben"):
            benchmark = {
                s.label: scen.benchmark_pcs(s, benchmark_n, 10_000, seed=seed)
                for s in all_scen
            }
        chosen = _guard(scen.select_subset, subset, all_scen, benchmark)
    else:
        chosen = _guard(_load_scenarios, subset, template.ttl)

    runner = calib.cyclic_calibrate if mode == "cyclic" else calib.grid_search
    kwargs = dict(alpha=alpha, ci_formula=ci_formula, threads=threads)
    omega, trace = _guard(
        runner, grid, chosen, template, B, seed=seed, **kwargs
    )
    best = _guard(calib.config_from_omega, template, omega)
    pseudo = None
    if design == "poblrm":
        pseudo = _guard(lambda: get_context(best).pseudo.as_tuple())
    manifest = RunManifest.create("calibrate", best, seed, [s.label for s in chosen], B)
    paths = write_calibration_report(omega, trace, manifest, template, out, pseudo)
    click.echo(f"omega* {omega}  ({trace.n_configs} configurations, lambda={lam})")
    for p in paths:
        click.echo(str(p))


@main.command()
@click.option("--scenarios", "selector", default="bundled", show_default=True)
@click.option("--n", default=45, show_default=True, help="patients per replication")
@click.option("--B", "-B", "B", default=10_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="benchmark", show_default=True)
def benchmark(selector, n, B, seed, out):
    """Complete-information benchmark PCS and scenario difficulty ranking."""
    scenarios = _guard(_load_scenarios, selector)
    pcs = {s.label: _guard(scen.benchmark_pcs, s, n, B, seed) for s in scenarios}
    manifest = RunManifest.create("benchmark", None, seed, list(pcs), B)
    paths = write_benchmark_report(pcs, manifest, out)
    for p in paths:
        click.echo(str(p))


@main.group()
def scenarios():
    """Scenario-set utilities."""


@scenarios.command()
@click.option("--grid", "grid_spec", default="3x3", show_default=True)
@click.option("--ttl", default=0.3, show_default=True)
@click.option("--step", default=0.1, show_default=True)
@click.option("--out", default="scenarios", show_default=True,
              help="output directory; one JSON file per scenario")
def generate(grid_spec, ttl, step, out):
    """Generate the full scenario set (one per MTC antichain)."""
    try:
        r, c = (int(x) for x in grid_spec.lower().split("x"))
    except ValueError:
        _fail(EXIT_CONFIG, f"bad grid spec {grid_spec!r}, expected e.g. 3x3")
    from .lattice import build_grid

    full = _guard(scen.full_scenario_set, _guard(build_grid, r, c), ttl, step)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for s in full:
        with open(outdir / f"scenario_{s.label}.json", "w", encoding="utf-8") as fh:
            json.dump(s.to_dict(), fh, indent=2)
    click.echo(f"{len(full)} scenario files in {outdir}")


@scenarios.command()
@click.option("--ttl", default=0.3, show_default=True)
@click.option("--out", default="scenarios_bundled.json", show_default=True)
def bundled(ttl, out):
    """Write the bundled reference scenario set to one JSON file."""
    scen.dump_scenarios(scen.bundled_scenarios(ttl), out)
    click.echo(out)


@main.command()
@click.option("--config", "config_paths", multiple=True, type=click.Path(exists=True),
              help="trial config(s) to time; defaults to both designs")
@click.option("--scenario", "scenario_id", default="7", show_default=True)
@click.option("--B", "-B", "B", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="timing", show_default=True)
def timing(config_paths, scenario_id, B, seed, out):
    """Wall-clock seconds per simulated trial, per design."""
    if B < 10:
        _fail(EXIT_CONFIG, "timing needs B >= 10")
    if config_paths:
        configs = {Path(p).stem: _guard(load_config, p) for p in config_paths}
    else:
        configs = {
            "poblrm": _default_template("poblrm", False),
            "pocrm": _default_template("pocrm", False),
        }
    sc = _guard(_load_scenarios, scenario_id)[0]
    stats: dict[str, dict] = {}
    for name, config in configs.items():
        _guard(simulate_trial, config, sc, seed, 0)  # warm the jit caches
        times = []
        for rep in range(B):
            t0 = time.perf_counter()
            _guard(simulate_trial, config, sc, seed, rep)
            times.append(time.perf_counter() - t0)
        stats[name] = {
            "trials": B,
            "mean_s": statistics.fmean(times),
            "median_s": statistics.median(times),
        }
    manifest = RunManifest.create("timing", None, seed, [sc.label], B)
    paths = write_timing_report(stats, manifest, out)
    if len(stats) == 2:
        a, b = stats.values()
        lo, hi = sorted((a["mean_s"], b["mean_s"]))
        click.echo(f"relative time 1 : {hi / lo:.2f}")
    for p in paths:
        click.echo(str(p))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--history", "history_path", required=True, type=click.Path(exists=True),
              help="JSON list of cohort outcomes, each {arm: dlt_count}")
@click.option("--out", default="-", show_default=True)
def replay(config_path, history_path, out):
    """Offline conduct of a recorded cohort history; prints the
    recommendation sequence (the service must agree on the same input)."""
    config = _guard(load_config, config_path)
    with open(history_path, encoding="utf-8") as fh:
        history = json.load(fh)
    state = _guard(init_trial, config)
    steps = []
    for item in history:
        outcomes = {int(a): int(v) for a, v in item.items()}
        state = _guard(apply_cohort, state, outcomes)
        rec = state.cohorts[-1]
        steps.append(
            {
                "recommendation": rec.recommendation,
                "selected_ordering": rec.selected_ordering + 1,
                # strict JSON has no NaN; the SoC slot is null when unused
                "phat": [None if p != p else p for p in rec.phat],
            }
        )
    payload = json.dumps({"steps": steps, "complete": state.complete}, indent=1)
    if out == "-":
        click.echo(payload)
    else:
        Path(out).write_text(payload + "\n", encoding="utf-8")
        click.echo(out)


@main.command()
@click.option("--port", default=8445, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", default="trial_data", show_default=True)
def serve(port, host, data_dir):
    """Run the live trial-conduct HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir), host=host, port=port)


if __name__ == "__main__":
    main()
