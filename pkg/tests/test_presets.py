"""Shipped preset files and experiment specs."""

from __future__ import annotations

import json

import numpy as np
import pytest

from core.errors import InvalidSpec, UnknownPreset
from core.presets import ExperimentSpec, list_presets, load_experiment, load_preset
from core.series import Device, Phase
from core.simulator import EcmBatteryParams, ScParams, simulate_battery, simulate_sc

SHIPPED = ["battery_hot", "battery_room", "sc_1f_hot", "sc_25f", "udds_pack"]


def test_shipped_presets_are_listed():
    assert list_presets() == SHIPPED


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_presets_validate(name):
    preset = load_preset(name)
    assert preset.name == name
    for block in preset.devices.values():
        params = block.device_params()
        assert isinstance(params, EcmBatteryParams if block.kind == Device.BATTERY else ScParams)
        assert len(block.profile(preset.default_profile)) > 0


@pytest.mark.parametrize("name", ["battery_room", "sc_25f", "sc_1f_hot"])
def test_cccv_presets_reach_every_phase(name):
    preset = load_preset(name)
    (block,) = preset.devices.values()
    sim = simulate_battery if block.kind == Device.BATTERY else simulate_sc
    series = sim(block.device_params(), block.profile("cccv"), block.soc_init("cccv"))
    assert {Phase(p) for p in series.phase} == {Phase.CC_CHARGE, Phase.CV_CHARGE, Phase.REST, Phase.DISCHARGE}
    assert 0.0 <= series.soc.min() and series.soc.max() <= 1.0


def test_hot_battery_is_a_parameter_shift():
    room = load_preset("battery_room").devices["battery"].device_params()
    hot = load_preset("battery_hot").devices["battery"].device_params()
    assert hot.capacity_ah == pytest.approx(0.95 * room.capacity_ah)
    assert hot.r0 == pytest.approx(1.3 * room.r0)
    assert hot.temperature_tag == "43C"


def test_hybrid_pack_has_both_devices():
    preset = load_preset("udds_pack")
    assert preset.default_profile == "udds"
    assert {b.kind for b in preset.devices.values()} == {Device.BATTERY, Device.SUPERCAPACITOR}


def test_dt_override_rescales_profile():
    block = load_preset("sc_25f").devices["sc"]
    assert len(block.profile("udds", dt=0.5)) == 2 * len(block.profile("udds"))


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        load_preset("no_such_preset")


def test_user_directory_takes_precedence(tmp_path):
    shipped = json.loads(load_preset("sc_25f").model_dump_json())
    shipped["description"] = "local copy"
    (tmp_path / "sc_25f.json").write_text(json.dumps(shipped))
    assert load_preset("sc_25f", extra_dir=tmp_path).description == "local copy"
    assert "sc_25f" in list_presets(tmp_path)


def test_invalid_preset_file(tmp_path):
    (tmp_path / "broken.json").write_text('{"name": "broken", "devices": {"x": {"kind": "flywheel"}}}')
    with pytest.raises(InvalidSpec):
        load_preset("broken", extra_dir=tmp_path)


def test_missing_profile_block(tmp_path):
    doc = {"name": "bare", "devices": {"sc": {"kind": "supercapacitor", "cccv": {"soc_init": 0.5, "spec": {"discharge_current": 0.1}}}}}
    (tmp_path / "bare.json").write_text(json.dumps(doc))
    block = load_preset("bare", extra_dir=tmp_path).devices["sc"]
    with pytest.raises(InvalidSpec):
        block.profile("udds")
    with pytest.raises(InvalidSpec):
        block.soc_init("udds")


def test_config_overrides():
    preset = load_preset("sc_25f")
    assert preset.train_config(seed=9).max_epochs == 150
    assert preset.train_config(seed=9, overrides={"max_epochs": 3}).max_epochs == 3
    assert preset.train_config(seed=9).seed == 9
    assert preset.narx_config({"hidden_neurons": 4}).hidden_neurons == 4


@pytest.mark.parametrize("name", ["battery_room", "battery_hot", "sc_25f", "sc_1f_hot", "udds_pack"])
def test_presets_select_weights_in_closed_loop(name):
    cfg = load_preset(name).train_config(seed=1)
    assert cfg.validation == "closed_loop"
    assert cfg.feedback_noise > 0


def test_noiseless_spec_drops_sigmas():
    noise = load_preset("battery_room").noise
    assert noise.spec(seed=3, noiseless=True).sigma_v == 0.0
    assert noise.spec(seed=3).sigma_i == pytest.approx(0.01)


# ── Experiments ───────────────────────────────────────────────────────

def test_experiment_label():
    assert ExperimentSpec(preset="sc_25f", profile="udds").label == "sc_25f_udds"
    assert ExperimentSpec(name="run1", preset="sc_25f").label == "run1"
    assert ExperimentSpec().label == "dataset_default"


def test_load_experiment(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"preset": "battery_room", "model": "ann", "seed": 7, "train": {"max_epochs": 2}}))
    spec = load_experiment(path)
    assert (spec.preset, spec.model, spec.seed) == ("battery_room", "ann", 7)
    assert spec.train == {"max_epochs": 2}


@pytest.mark.parametrize("doc", [
    '{"preset": "sc_25f", "model": "svm"}',
    '{"preset": "sc_25f", "dt": -1}',
    "{not json",
])
def test_invalid_experiment(tmp_path, doc):
    path = tmp_path / "exp.json"
    path.write_text(doc)
    with pytest.raises(InvalidSpec):
        load_experiment(path)


def test_profiles_share_shape_across_devices():
    preset = load_preset("udds_pack")
    battery = preset.devices["battery"].profile("udds", seed=42).samples / 20.0
    sc = preset.devices["sc"].profile("udds", seed=42).samples / 4.0
    assert np.allclose(battery, sc, rtol=0, atol=1e-12)
