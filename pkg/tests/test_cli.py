"""End-to-end runs of soc_cli.py through ``main(argv)``."""

from __future__ import annotations

import json
from dataclasses import replace

import pandas as pd
import pytest

import soc_cli
from core import pipeline
from core.checks import CheckResult
from core.errors import NonFiniteLoss
from sources.csv_file import CsvSource, read_series_csv, series_to_csv


def run(*argv) -> int:
    return soc_cli.main([str(a) for a in argv])


@pytest.fixture
def sc_data(tmp_path):
    assert run("simulate", "--preset", "sc_25f", "--profile", "udds", "--out", tmp_path) == 0
    return tmp_path / "sc_25f_udds_sc.csv"


@pytest.fixture
def battery_data(tmp_path):
    assert run("simulate", "--preset", "battery_room", "--profile", "udds", "--out", tmp_path) == 0
    return tmp_path / "battery_room_udds_battery.csv"


# ── simulate ──────────────────────────────────────────────────────────

def test_simulate_writes_dataset_and_manifest(sc_data):
    manifest = json.loads((sc_data.parent / "sc_25f_udds.manifest.json").read_text())
    assert manifest["seed"] == 42
    assert manifest["profile"] == "udds"
    assert set(manifest["files"]) == {sc_data.name}
    assert manifest["files"][sc_data.name] == soc_cli.sha256_text(sc_data.read_text())
    assert len(manifest["config_checksum"]) == 64

    series = read_series_csv(sc_data)
    assert len(series) == 900 and series.has_soc


def test_simulate_is_byte_reproducible(tmp_path):
    for sub in ("a", "b"):
        assert run("simulate", "--preset", "udds_pack", "--seed", 7, "--out", tmp_path / sub) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["udds_pack_udds.manifest.json", "udds_pack_udds_battery.csv", "udds_pack_udds_sc.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_dt_override(tmp_path):
    assert run("simulate", "--preset", "sc_25f", "--profile", "udds", "--dt", 0.5, "--out", tmp_path) == 0
    assert len(read_series_csv(tmp_path / "sc_25f_udds_sc.csv")) == 1800


def test_simulate_from_experiment_file(tmp_path):
    config = tmp_path / "exp.json"
    config.write_text(json.dumps({"name": "quick", "preset": "sc_1f_hot", "noiseless": True}))
    assert run("simulate", "--config", config, "--out", tmp_path) == 0
    series = read_series_csv(tmp_path / "quick_sc.csv")
    assert series.meta["sigma_v"] == 0.0


@pytest.mark.parametrize("argv", [
    ["simulate", "--preset", "no_such_preset"],
    ["simulate"],
])
def test_simulate_configuration_errors(tmp_path, argv):
    assert run(*argv, "--out", tmp_path) == 2


def test_invalid_config_file(tmp_path):
    config = tmp_path / "exp.json"
    config.write_text("{broken")
    assert run("simulate", "--config", config, "--out", tmp_path) == 2


# ── train / estimate ──────────────────────────────────────────────────

def test_train_sc_writes_bundle_and_report(sc_data):
    out = sc_data.parent
    assert run("train", "--data", sc_data, "--epochs", 2, "--out", out) == 0
    bundle = json.loads((out / "sc_25f_udds_sc.narx.bundle.json").read_text())
    report = json.loads((out / "sc_25f_udds_sc.narx.report.json").read_text())
    assert bundle["format"] == "soc-bundle-v1"
    assert set(bundle["networks"]) == {"main"}
    assert bundle["train_config"]["max_epochs"] == 2
    assert report["model"] == "NARXNN"
    assert report["bundle_checksum"] == bundle["checksum"]
    assert report["config_checksum"] == bundle["config_checksum"]


def test_train_is_byte_reproducible(sc_data, tmp_path):
    for sub in ("a", "b"):
        assert run("train", "--data", sc_data, "--epochs", 2, "--out", tmp_path / sub) == 0
    for name in ("sc_25f_udds_sc.narx.bundle.json", "sc_25f_udds_sc.narx.report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_ann_baseline(sc_data):
    assert run("train", "--data", sc_data, "--model", "ann", "--epochs", 2, "--out", sc_data.parent) == 0
    bundle = json.loads((sc_data.parent / "sc_25f_udds_sc.ann.bundle.json").read_text())
    assert bundle["model"] == "ann"
    assert bundle["config"]["output_delays"] == []


def test_train_battery_gets_regime_networks(battery_data):
    assert run("train", "--data", battery_data, "--epochs", 2, "--out", battery_data.parent) == 0
    bundle = json.loads((battery_data.parent / "battery_room_udds_battery.narx.bundle.json").read_text())
    assert set(bundle["networks"]) == {"charge", "discharge"}
    assert bundle["device"] == "battery"


def test_train_without_ground_truth(sc_data, tmp_path):
    series = read_series_csv(sc_data)
    raw = tmp_path / "raw.csv"
    raw.write_text(series_to_csv(replace(series.without_soc(), meta={})))
    assert run("train", "--data", raw, "--epochs", 2, "--out", tmp_path) == 3
    assert run("train", "--data", raw, "--device", "supercapacitor", "--capacity-ah", 25 * 2.7 / 3600,
               "--soc-init", 0.9, "--epochs", 2, "--out", tmp_path) == 0
    bundle = json.loads((tmp_path / "raw.narx.bundle.json").read_text())
    assert bundle["device"] == "supercapacitor"


def test_train_loads_through_csv_source(sc_data, tmp_path, monkeypatch):
    seen = []

    class RecordingSource(CsvSource):
        def load(self):
            seen.append((self.paths, self.capacity_c, self.soc_init))
            return super().load()

    monkeypatch.setattr(soc_cli, "CsvSource", RecordingSource)
    assert run("train", "--data", sc_data, "--capacity-ah", 25 * 2.7 / 3600, "--soc-init", 0.9,
               "--epochs", 1, "--out", tmp_path) == 0
    assert len(seen) == 1
    paths, capacity_c, soc_init = seen[0]
    assert paths == [sc_data]
    assert capacity_c == pytest.approx(67.5) and soc_init == 0.9


def test_training_failure_exits_4(sc_data, tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise NonFiniteLoss("residuals became non-finite")

    monkeypatch.setattr(pipeline, "train_narx", diverge)
    assert run("train", "--data", sc_data, "--epochs", 2, "--out", tmp_path) == 4
    assert not (tmp_path / "sc_25f_udds_sc.narx.bundle.json").exists()


def test_train_missing_file(tmp_path):
    assert run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 2


def test_estimate_with_ground_truth(sc_data):
    out = sc_data.parent
    assert run("train", "--data", sc_data, "--epochs", 2, "--out", out) == 0
    assert run("estimate", "--bundle", out / "sc_25f_udds_sc.narx.bundle.json", "--data", sc_data, "--out", out) == 0

    metrics = json.loads((out / "sc_25f_udds_sc.narx.metrics.json").read_text())
    assert {"mae_pct", "rmse_pct", "window", "segments", "elapsed_s", "bundle_checksum"} <= set(metrics)
    assert metrics["window"]["n_points"] == 900 - 765
    assert metrics["mae_pct"] <= metrics["rmse_pct"] + 1e-12

    df = pd.read_csv(out / "sc_25f_udds_sc.narx.estimate.csv", comment="#")
    assert list(df.columns) == ["t", "soc_true", "soc_est", "abs_err"]
    assert len(df) == 900
    assert df["soc_est"].between(0, 1).all()


def test_estimate_without_ground_truth(sc_data, tmp_path):
    out = sc_data.parent
    assert run("train", "--data", sc_data, "--epochs", 2, "--out", out) == 0
    raw = tmp_path / "raw.csv"
    raw.write_text(series_to_csv(read_series_csv(sc_data).without_soc()))
    assert run("estimate", "--bundle", out / "sc_25f_udds_sc.narx.bundle.json", "--data", raw,
               "--soc0", 0.9, "--out", tmp_path) == 0
    assert (tmp_path / "raw.narx.estimate.csv").exists()
    assert not (tmp_path / "raw.narx.metrics.json").exists()


def test_estimate_provided_soc0_count_mismatch(battery_data):
    out = battery_data.parent
    assert run("train", "--data", battery_data, "--epochs", 2, "--out", out) == 0
    code = run("estimate", "--bundle", out / "battery_room_udds_battery.narx.bundle.json",
               "--data", battery_data, "--soc0", "0.85,0.84", "--out", out)
    assert code == 3


# ── compare / selftest ────────────────────────────────────────────────

def test_compare_is_deterministic(tmp_path):
    for sub, jobs in (("a", 2), ("b", 1)):
        code = run("compare", "--preset", "sc_1f_hot", "--epochs", 2, "--jobs", jobs, "--out", tmp_path / sub)
        assert code == 0
    a = (tmp_path / "a" / "compare.json").read_bytes()
    assert a == (tmp_path / "b" / "compare.json").read_bytes()

    table = json.loads(a)
    assert [r["model"] for r in table["rows"]] == ["NARXNN", "ANN"]
    assert {r["device"] for r in table["rows"]} == {"sc"}
    assert table["experiments"][0]["name"] == "sc_1f_hot_cccv"
    text = (tmp_path / "a" / "compare.txt").read_text()
    assert "NARXNN" in text and "ANN" in text
    assert (tmp_path / "a" / "sc_1f_hot_cccv" / "sc_1f_hot_cccv_sc.narx.bundle.json").exists()


def test_compare_needs_a_preset(tmp_path):
    assert run("compare", "--out", tmp_path) == 2


def test_selftest():
    assert run("selftest") == 0


def test_failed_selftest_exits_4(monkeypatch):
    monkeypatch.setattr(soc_cli, "run_selftest", lambda: [CheckResult("bundle_round_trip", False, "checksum drift")])
    assert run("selftest") == 4
