"""Report emission: delimited tables mirroring the published layout, JSON
twins carrying full diagnostics, run manifests, and rendered figures.

Every report embeds a :class:`RunManifest`; re-running the same manifest
reproduces the report byte-for-byte apart from the timestamp field.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .engine import OperatingCharacteristics, TrialConfig
from .modelprior import NormalPrior

__all__ = [
    "RunManifest",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "write_oc_report",
    "write_calibration_report",
    "write_benchmark_report",
    "write_timing_report",
]

CONFIG_SCHEMA_VERSION = 1


def config_to_dict(config: TrialConfig) -> dict:
    out = {"schema_version": CONFIG_SCHEMA_VERSION}
    out.update(asdict(config))
    if config.prior is not None:
        out["prior"] = asdict(config.prior)
    if config.skeleton_values is not None:
        out["skeleton_values"] = list(config.skeleton_values)
    if config.pseudo_override is not None:
        out["pseudo_override"] = list(config.pseudo_override)
    return out


def config_from_dict(data: dict) -> TrialConfig:
    data = dict(data)
    version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema version {version}")
    if data.get("prior") is not None:
        data["prior"] = NormalPrior(**data["prior"])
    for key in ("skeleton_values", "pseudo_override"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    if data.get("orderings") is not None:
        data["orderings"] = tuple(tuple(o) for o in data["orderings"])
    if data.get("ordering_prior") is not None:
        data["ordering_prior"] = tuple(data["ordering_prior"])
    known = set(TrialConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    config = TrialConfig(**data)
    config.validate()
    return config


def load_config(path: str | Path) -> TrialConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def config_hash(config: TrialConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str
    created_at: str
    scenario_ids: list[str]
    B: int

    @classmethod
    def create(cls, command: str, config: TrialConfig | None, seed: int, scenario_ids, B: int):
        return cls(
            command=command,
            config_hash=config_hash(config) if config is not None else "",
            seed=seed,
            version=__version__,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            scenario_ids=[str(s) for s in scenario_ids],
            B=B,
        )


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_oc_report(
    results: list[OperatingCharacteristics],
    manifest: RunManifest,
    config: TrialConfig,
    out_base: str | Path,
) -> list[Path]:
    """One row per (scenario, design): selection percentages per candidate arm
    (SoC first when randomised), PCS, and both overdose metrics."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    k = config.rows * config.cols
    randomised = any(r.randomised for r in results)
    arm_cols = (["SoC"] if randomised else []) + [f"d{i}" for i in range(1, k + 1)]
    header = ["scenario", "design"] + arm_cols + [
        "pcs",
        "overdose_alloc",
        "overdose_rec",
        "mean_dlts",
    ]
    rows = []
    for r in results:
        arms = ([0] if randomised else []) + list(range(1, k + 1))
        rows.append(
            [r.scenario_label, r.design]
            + [_pct(r.selection.get(a, 0.0)) for a in arms]
            + [_pct(r.pcs), _pct(r.overdose_alloc), _pct(r.overdose_rec), f"{r.mean_dlts:.2f}"]
        )
    csv_path = out_base.with_suffix(".csv")
    _write_csv(csv_path, header, rows)
    json_path = out_base.with_suffix(".json")
    _write_json(
        json_path,
        {
            "manifest": asdict(manifest),
            "config": config_to_dict(config),
            "results": [r.to_dict() for r in results],
        },
    )
    fig_path = out_base.parent / (out_base.name + "_pcs.png")
    _plot_oc(results, fig_path)
    return [csv_path, json_path, fig_path]


def _plot_oc(results: list[OperatingCharacteristics], path: Path) -> None:
    labels = [r.scenario_label for r in results]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    x = range(len(results))
    ax1.bar(x, [100 * r.pcs for r in results], color="#4878a8")
    ax1.set_ylabel("PCS (%)")
    ax2.bar(x, [100 * r.overdose_rec for r in results], color="#b05050")
    ax2.set_ylabel("overdose recommendation (%)")
    ax2.set_xlabel("scenario")
    ax2.set_xticks(list(x))
    ax2.set_xticklabels(labels, rotation=0, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_calibration_report(
    omega: dict,
    trace,
    manifest: RunManifest,
    template: TrialConfig,
    out_base: str | Path,
    pseudo: tuple | None = None,
) -> list[Path]:
    """Trace CSV (one row per evaluated configuration) and a JSON report with
    the selected hyperparameters and, for the logistic design, the matched
    pseudo prior."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    axis_names = list(trace.entries[0].omega) if trace.entries else list(omega)
    header = (
        ["cycle", "axis"]
        + axis_names
        + ["gm_pcs", "ci_lower", "ci_upper", "accepted"]
        + [f"pcs_{sid}" for sid in manifest.scenario_ids]
    )
    rows = []
    for e in trace.entries:
        rows.append(
            [e.cycle, e.axis]
            + [e.omega[a] for a in axis_names]
            + [f"{e.gm:.4f}", f"{e.ci[0]:.4f}", f"{e.ci[1]:.4f}", int(e.accepted)]
            + [f"{p:.4f}" for p in e.per_scenario_pcs]
        )
    csv_path = out_base.with_suffix(".csv")
    _write_csv(csv_path, header, rows)
    json_path = out_base.with_suffix(".json")
    _write_json(
        json_path,
        {
            "manifest": asdict(manifest),
            "template": config_to_dict(template),
            "omega": omega,
            "matched_pseudo": list(pseudo) if pseudo is not None else None,
            "n_configs": trace.n_configs,
            "n_simulations": trace.n_simulations,
            "cycles": trace.cycles,
            "trace": [
                {
                    "cycle": e.cycle,
                    "axis": e.axis,
                    "omega": e.omega,
                    "per_scenario_pcs": list(e.per_scenario_pcs),
                    "gm": e.gm,
                    "ci": list(e.ci),
                    "accepted": e.accepted,
                }
                for e in trace.entries
            ],
        },
    )
    fig_path = out_base.parent / (out_base.name + "_trace.png")
    fig, ax = plt.subplots(figsize=(8, 4))
    gms = [100 * e.gm for e in trace.entries]
    ax.plot(range(len(gms)), gms, ".", color="#808080", label="evaluated")
    acc = [(i, 100 * e.gm) for i, e in enumerate(trace.entries) if e.accepted]
    if acc:
        ax.plot([a for a, _ in acc], [g for _, g in acc], "o-", color="#4878a8", label="accepted")
    ax.set_xlabel("configuration")
    ax.set_ylabel("geometric-mean PCS (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, json_path, fig_path]


def write_benchmark_report(
    pcs_by_label: dict[str, float],
    manifest: RunManifest,
    out_base: str | Path,
) -> list[Path]:
    """Benchmark PCS per scenario plus the implied difficulty ranking."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    ranking = sorted(pcs_by_label, key=lambda lab: (pcs_by_label[lab], lab))
    rows = [
        [lab, _pct(pcs_by_label[lab]), ranking.index(lab) + 1] for lab in pcs_by_label
    ]
    csv_path = out_base.with_suffix(".csv")
    _write_csv(csv_path, ["scenario", "benchmark_pcs", "difficulty_rank"], rows)
    json_path = out_base.with_suffix(".json")
    _write_json(
        json_path,
        {
            "manifest": asdict(manifest),
            "benchmark_pcs": pcs_by_label,
            "difficulty_ranking": ranking,
        },
    )
    fig_path = out_base.parent / (out_base.name + "_benchmark.png")
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = list(pcs_by_label)
    ax.bar(range(len(labels)), [100 * pcs_by_label[lab] for lab in labels], color="#d09040")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_xlabel("scenario")
    ax.set_ylabel("benchmark PCS (%)")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return [csv_path, json_path, fig_path]


def write_timing_report(stats: dict, manifest: RunManifest, out_base: str | Path) -> list[Path]:
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    header = ["design", "trials", "mean_s", "median_s"]
    rows = [
        [name, s["trials"], f"{s['mean_s']:.4f}", f"{s['median_s']:.4f}"]
        for name, s in stats.items()
    ]
    csv_path = out_base.with_suffix(".csv")
    _write_csv(csv_path, header, rows)
    json_path = out_base.with_suffix(".json")
    _write_json(json_path, {"manifest": asdict(manifest), "timing": stats})
    return [csv_path, json_path]
