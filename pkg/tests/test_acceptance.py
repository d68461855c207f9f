"""
Accuracy thresholds on simulated presets.  These train full-size networks
for the preset's epoch budget and take minutes; run with ``pytest -m slow``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, Tuple

import numpy as np
import pytest

import soc_cli
from core.pipeline import estimate_soc_detailed, evaluate, fit_estimator, holdout_window
from core.presets import load_preset
from core.trainer import StopReason
from sources.simulated import SimulatedSource

pytestmark = pytest.mark.slow

SEED = 42


@lru_cache(maxsize=None)
def _run(preset_name: str, model: str, noiseless: bool = False, profile: str = "") -> Tuple[Dict[str, object], ...]:
    """Fit + closed-loop estimate for every device; metrics on the held-out final block."""
    preset = load_preset(preset_name)
    datasets = SimulatedSource(preset, profile or None, seed=SEED, noiseless=noiseless).load()
    narx_cfg, train_cfg = preset.narx_config(), preset.train_config(SEED)
    out = []
    for series in datasets:
        bundle, reports = fit_estimator(series, narx_cfg=narx_cfg, train_cfg=train_cfg, model=model)
        est, _ = estimate_soc_detailed(bundle, series.without_soc(), float(series.soc[0]))
        window = holdout_window(len(series), train_cfg)
        out.append({
            "device": series.meta["name"],
            "metrics": evaluate(series.soc[window], est[window]),
            "reports": reports,
        })
    return tuple(out)


@pytest.mark.parametrize("preset", ["sc_25f", "battery_room"])
def test_cccv_accuracy_with_sensor_noise(preset):
    for run in _run(preset, "narx"):
        m = run["metrics"]
        assert m.mae_pct < 1.0, (run["device"], m)
        assert m.rmse_pct < 1.5, (run["device"], m)


@pytest.mark.parametrize("preset", ["sc_25f", "battery_room"])
def test_cccv_accuracy_noiseless(preset):
    for run in _run(preset, "narx", noiseless=True):
        assert run["metrics"].mae_pct < 0.1, (run["device"], run["metrics"])


def test_drive_cycle_narx_beats_feedforward():
    narx = {r["device"]: r["metrics"] for r in _run("udds_pack", "narx")}
    ann = {r["device"]: r["metrics"] for r in _run("udds_pack", "ann")}
    assert set(narx) == {"battery", "sc"}
    for device in narx:
        assert narx[device].mae_pct < ann[device].mae_pct, device
        assert narx[device].rmse_pct < ann[device].rmse_pct, device


@pytest.mark.parametrize("preset", ["battery_hot", "sc_1f_hot"])
def test_elevated_temperature(preset):
    narx = _run(preset, "narx")
    ann = _run(preset, "ann")
    for a, b in zip(narx, ann):
        assert a["metrics"].mae_pct < 2.0, (a["device"], a["metrics"])
        assert a["metrics"].mae_pct < b["metrics"].mae_pct
        assert a["metrics"].rmse_pct < b["metrics"].rmse_pct


@pytest.mark.parametrize("preset", ["sc_25f", "battery_room", "battery_hot", "sc_1f_hot", "udds_pack"])
def test_levenberg_marquardt_is_monotone_on_presets(preset):
    for run in _run(preset, "narx"):
        for report in run["reports"].values():
            assert np.all(np.diff(report.train_mse) <= 0)
            assert report.stop_reason != StopReason.MU_OVERFLOW


def test_compare_outputs_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert soc_cli.main(["compare", "--preset", "sc_25f", "--jobs", "2", "--out", str(tmp_path / sub)]) == 0
    assert (tmp_path / "a" / "compare.json").read_bytes() == (tmp_path / "b" / "compare.json").read_bytes()
