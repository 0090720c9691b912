import csv
import json
from dataclasses import replace

import pytest

from podose.calibration import CalibrationTrace, TraceEntry
from podose.engine import ConfigError, OperatingCharacteristics
from podose.reporting import (
    RunManifest,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    write_benchmark_report,
    write_calibration_report,
    write_oc_report,
    write_timing_report,
)


def test_config_roundtrip_poblrm(poblrm_config):
    cfg = replace(poblrm_config, pseudo_override=(0.45, 1.50, 0.57, 1.65))
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_config_roundtrip_pocrm(pocrm_config):
    assert config_from_dict(config_to_dict(pocrm_config)) == pocrm_config


def test_config_roundtrip_orderings(pocrm_config):
    cfg = replace(
        pocrm_config,
        orderings=((1, 2, 3, 4, 5, 6, 7, 8, 9),),
        ordering_prior=(1.0,),
    )
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_config_from_dict_rejects_unknown_fields(pocrm_config):
    data = config_to_dict(pocrm_config)
    data["bogus"] = 1
    with pytest.raises(ValueError):
        config_from_dict(data)


def test_config_from_dict_rejects_bad_schema(pocrm_config):
    data = config_to_dict(pocrm_config)
    data["schema_version"] = 99
    with pytest.raises(ValueError):
        config_from_dict(data)


def test_config_from_dict_validates(pocrm_config):
    data = config_to_dict(pocrm_config)
    data["n_cohorts"] = 0
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_reports_json_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "design": "pocrm",\n oops\n}\n')
    with pytest.raises(ValueError, match=r":3:"):
        load_config(path)


def test_load_config_roundtrip(tmp_path, pocrm_config):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config_to_dict(pocrm_config)))
    assert load_config(path) == pocrm_config


def test_config_hash_sensitivity(pocrm_config):
    h = config_hash(pocrm_config)
    assert len(h) == 16
    assert h == config_hash(pocrm_config)
    assert h != config_hash(replace(pocrm_config, ttl=0.25))


def _oc(label, pcs, randomised=False):
    arms = range(0 if randomised else 1, 10)
    sel = {a: 0.0 for a in arms}
    sel[1] = pcs
    sel[2] = 1.0 - pcs
    alloc = {a: 1.0 / len(sel) for a in sel}
    return OperatingCharacteristics(
        design="pocrm",
        scenario_label=label,
        B=100,
        seed=0,
        randomised=randomised,
        pcs=pcs,
        selection=sel,
        allocation=alloc,
        overdose_alloc=0.25,
        overdose_rec=0.125,
        mean_dlts=3.21,
    )


def test_write_oc_report_files_and_twins(tmp_path, pocrm_config):
    results = [_oc("1", 0.4), _oc("2", 0.6)]
    manifest = RunManifest.create("simulate", pocrm_config, 7, ["1", "2"], 100)
    paths = write_oc_report(results, manifest, pocrm_config, tmp_path / "oc")
    csv_path, json_path, fig_path = paths
    assert csv_path.exists() and json_path.exists() and fig_path.exists()
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    payload = json.loads(json_path.read_text())
    assert len(rows) == len(payload["results"]) == 2
    for row, res in zip(rows, payload["results"]):
        assert row["scenario"] == res["scenario"]
        # the delimited view is the JSON value rendered as a 1-decimal percent
        assert row["pcs"] == f"{100 * res['pcs']:.1f}"
        assert row["d1"] == f"{100 * res['selection']['1']:.1f}"
        assert row["overdose_alloc"] == f"{100 * res['overdose_alloc']:.1f}"
    assert payload["manifest"]["config_hash"] == config_hash(pocrm_config)
    assert payload["config"]["design"] == "pocrm"


def test_write_oc_report_randomised_has_soc_column(tmp_path, pocrm_config):
    results = [_oc("1", 0.5, randomised=True)]
    manifest = RunManifest.create("simulate", pocrm_config, 0, ["1"], 10)
    csv_path = write_oc_report(results, manifest, pocrm_config, tmp_path / "oc")[0]
    with open(csv_path) as fh:
        header = next(csv.reader(fh))
    assert header[2] == "SoC"


def _trace():
    t = CalibrationTrace()
    for i, (gm, acc) in enumerate([(0.3, True), (0.28, False), (0.35, True)]):
        t.entries.append(
            TraceEntry(
                omega={"p1": 0.05 + 0.05 * i, "nu": 0.05, "sigma": 0.5},
                per_scenario_pcs=(gm, gm),
                gm=gm,
                ci=(gm - 0.02, gm + 0.02),
                accepted=acc,
                cycle=1,
                axis="p1",
            )
        )
    t.n_configs = 3
    t.n_simulations = 600
    t.cycles = 1
    return t


def test_write_calibration_report(tmp_path, pocrm_config):
    trace = _trace()
    manifest = RunManifest.create("calibrate", pocrm_config, 0, ["1", "7"], 100)
    omega = trace.entries[-1].omega
    paths = write_calibration_report(
        omega, trace, manifest, pocrm_config, tmp_path / "cal", pseudo=(1, 2, 3, 4)
    )
    csv_path, json_path, fig_path = paths
    assert fig_path.exists()
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    payload = json.loads(json_path.read_text())
    assert payload["omega"] == omega
    assert payload["matched_pseudo"] == [1, 2, 3, 4]
    assert payload["n_configs"] == 3
    assert len(rows) == len(payload["trace"]) == 3
    for row, ent in zip(rows, payload["trace"]):
        assert row["gm_pcs"] == f"{ent['gm']:.4f}"
        assert row["accepted"] == str(int(ent["accepted"]))
        assert float(row["p1"]) == ent["omega"]["p1"]


def test_write_benchmark_report(tmp_path):
    pcs = {"1": 0.9, "7": 0.2, "10": 0.5}
    manifest = RunManifest.create("benchmark", None, 0, list(pcs), 1000)
    csv_path, json_path, fig_path = write_benchmark_report(
        pcs, manifest, tmp_path / "ben"
    )
    assert fig_path.exists()
    payload = json.loads(json_path.read_text())
    assert payload["difficulty_ranking"] == ["7", "10", "1"]
    with open(csv_path) as fh:
        rows = {r["scenario"]: r for r in csv.DictReader(fh)}
    assert rows["7"]["difficulty_rank"] == "1"
    assert rows["1"]["benchmark_pcs"] == "90.0"


def test_write_timing_report(tmp_path):
    stats = {
        "pocrm": {"trials": 50, "mean_s": 0.0213, "median_s": 0.02},
        "poblrm": {"trials": 50, "mean_s": 0.0484, "median_s": 0.047},
    }
    manifest = RunManifest.create("timing", None, 0, ["7"], 50)
    csv_path, json_path = write_timing_report(stats, manifest, tmp_path / "tim")
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["design"] for r in rows] == ["pocrm", "poblrm"]
    assert rows[0]["mean_s"] == "0.0213"
    assert json.loads(json_path.read_text())["timing"] == stats
