"""ECM simulator and current profile generators."""

from __future__ import annotations

import numpy as np
import pytest

from core.errors import CutoffAtStart, InvalidConfig, InvalidSpec
from core.pipeline import CoulombConfig, coulomb_count
from core.series import Phase
from core.simulator import (
    CccvSpec,
    CurrentProfile,
    EcmBatteryParams,
    NoiseSpec,
    OcvCurve,
    ScParams,
    default_ocv,
    profile_cccv,
    profile_udds_like,
    simulate_battery,
    simulate_sc,
)


def _constant(phase, current, n, dt=1.0, **kwargs):
    return CurrentProfile(dt=dt, samples=np.full(n, current), phase_labels=[phase] * n, **kwargs)


# ── Parameters ────────────────────────────────────────────────────────

def test_default_ocv_spans_cell_window():
    ocv = default_ocv()
    assert ocv(0.0) == pytest.approx(2.5)
    assert ocv(1.0) == pytest.approx(4.2)


def test_ocv_must_increase():
    with pytest.raises(InvalidConfig):
        OcvCurve((0.0, 0.5, 1.0), (3.0, 2.9, 4.0))


@pytest.mark.parametrize("kwargs", [{"r0": 0.0}, {"c1": -1.0}, {"v_min": 4.3}])
def test_battery_params_invariants(kwargs):
    with pytest.raises(InvalidConfig):
        EcmBatteryParams(**kwargs)


def test_temperature_shift_scales_capacity_and_resistances():
    hot = EcmBatteryParams().shifted(0.95, 1.3, "43C")
    assert hot.capacity_ah == pytest.approx(7.08 * 0.95)
    assert (hot.r0, hot.r1) == pytest.approx((0.013, 0.0065))
    assert hot.c1 == 2000.0 and hot.temperature_tag == "43C"


def test_params_round_trip():
    p = EcmBatteryParams(capacity_ah=3.0)
    assert EcmBatteryParams.from_dict(p.to_dict()) == p
    sc = ScParams()
    assert sc.to_dict()["leak_r"] is None
    assert ScParams.from_dict(sc.to_dict()) == sc


# ── Profiles ──────────────────────────────────────────────────────────

def test_discharge_only_spec_is_one_phase():
    profile = profile_cccv(CccvSpec(discharge_current=1.0, discharge_max_s=100))
    assert profile.phases() == [(Phase.DISCHARGE, 0, 100)]
    assert np.all(profile.samples == 1.0)


def test_cccv_cycles_repeat_phase_order():
    spec = CccvSpec(
        cc_current=1.0, cv_voltage=4.2, rest_s=10, discharge_current=1.0,
        cc_max_s=5, cv_max_s=5, discharge_max_s=5, cycles=2,
    )
    runs = profile_cccv(spec).phases()
    order = [Phase.CC_CHARGE, Phase.CV_CHARGE, Phase.REST, Phase.DISCHARGE]
    assert [p for p, _, _ in runs] == order * 2
    assert [b - a for _, a, b in runs] == [5, 5, 10, 5] * 2


def test_empty_cccv_spec():
    with pytest.raises(InvalidSpec):
        profile_cccv(CccvSpec())


def test_udds_profile_is_seeded():
    a = profile_udds_like(7, 600, 10.0)
    b = profile_udds_like(7, 600, 10.0)
    c = profile_udds_like(8, 600, 10.0)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


@pytest.mark.parametrize("duration", [60, 300, 3600])
def test_udds_profile_bounds_and_signs(duration):
    profile = profile_udds_like(3, duration, 5.0, dt=0.5)
    assert len(profile) == duration * 2
    assert np.max(np.abs(profile.samples)) <= 5.0
    assert profile.samples.max() > 0 and profile.samples.min() < 0


def test_udds_rejects_bad_arguments():
    with pytest.raises(InvalidSpec):
        profile_udds_like(0, 100, 0.0)


# ── Battery ───────────────────────────────────────────────────────────

def test_one_c_discharge_soc_is_linear():
    params = EcmBatteryParams(capacity_ah=1.0)
    series = simulate_battery(params, profile_cccv(CccvSpec(discharge_current=1.0, discharge_max_s=3600)), 1.0)
    assert set(series.phase) == {Phase.DISCHARGE}
    assert len(series) <= 3600
    assert np.allclose(series.soc, 1.0 - series.t / 3600.0, rtol=0, atol=1e-10)
    assert series.voltage[-1] >= params.v_min


def test_rc_step_response():
    params = EcmBatteryParams(capacity_ah=100.0, r0=0.01, r1=0.01, c1=1000.0)
    series = simulate_battery(params, _constant(Phase.DISCHARGE, 1.0, 3001, dt=0.01), 0.5)
    t = series.t
    expected = 1.0 * 0.01 * (1.0 - np.exp(-t / 10.0))
    assert np.allclose(series.traces["v_rc"][1:], expected[1:], rtol=1e-3, atol=0)
    terminal = series.traces["ocv"] - 0.01 * series.current - series.traces["v_rc"]
    assert np.allclose(series.voltage, terminal, rtol=0, atol=1e-12)


def test_cccv_voltage_signature():
    params = EcmBatteryParams(capacity_ah=1.0)
    spec = CccvSpec(
        cc_current=1.0, cv_voltage=4.2, cv_cutoff_current=0.05, rest_s=60,
        discharge_current=1.0, cc_max_s=7200, cv_max_s=3600, discharge_max_s=7200,
    )
    series = simulate_battery(params, profile_cccv(spec), 0.5)
    v, i = series.voltage, series.current

    cc = series.phase == Phase.CC_CHARGE
    cv = series.phase == Phase.CV_CHARGE
    dis = series.phase == Phase.DISCHARGE
    assert cc.any() and cv.any() and dis.any()
    assert np.all(np.diff(v[cc]) >= -1e-12)
    assert np.all(np.abs(v[cv] - 4.2) < 1e-3)
    assert np.all(np.diff(np.abs(i[cv])) <= 1e-6)
    assert np.all(i[cv] <= 0)
    assert np.all(np.diff(v[dis]) < 0)


def test_cc_hands_over_below_voltage_limit():
    params = EcmBatteryParams(capacity_ah=1.0)
    spec = CccvSpec(cc_current=1.0, cv_voltage=4.0, cv_cutoff_current=0.05, cc_max_s=7200, cv_max_s=3600)
    series = simulate_battery(params, profile_cccv(spec), 0.5)
    cc = series.phase == Phase.CC_CHARGE
    assert series.voltage[cc].max() <= 4.0 + 1e-9
    assert np.all(series.current[series.phase == Phase.CV_CHARGE] <= 0)


def test_cv_step_refinement_converges_first_order():
    params = EcmBatteryParams(capacity_ah=1.0, r0=0.01, r1=0.05, c1=2000.0)
    v_cv = params.ocv_curve(0.5) + 0.05
    horizon = 60.0
    finals = []
    for dt in (1.0, 0.5, 0.25, 0.125):
        n = int(horizon / dt) + 1
        profile = _constant(Phase.CV_CHARGE, -1000.0, n, dt=dt, cv_voltage=v_cv, cv_cutoff_current=0.0)
        series = simulate_battery(params, profile, 0.5)
        assert len(series) == n
        finals.append(series.soc[-1])
    assert finals[-1] > 0.5
    for a, b, c in zip(finals, finals[1:], finals[2:]):
        assert 1.5 <= (a - b) / (b - c) <= 2.5


@pytest.mark.parametrize("hot", [False, True])
@pytest.mark.parametrize("phase, c_rate, soc_init", [
    (Phase.DISCHARGE, 1.0, 0.9),
    (Phase.DISCHARGE, 2.0, 0.9),
    (Phase.CC_CHARGE, -1.0, 0.2),
])
def test_battery_terminal_power_never_beats_open_circuit_power(hot, phase, c_rate, soc_init):
    params = EcmBatteryParams()
    if hot:
        params = params.shifted(0.95, 1.3, "43C")
    series = simulate_battery(params, _constant(phase, c_rate * params.capacity_ah, 1800), soc_init)
    current = series.traces["current_true"]
    assert len(series) > 100
    assert np.all(series.traces["voltage_true"] * current <= series.traces["ocv"] * current + 1e-12)


def test_soc_matches_coulomb_counting_of_true_current():
    params = EcmBatteryParams(capacity_ah=1.0)
    series = simulate_battery(params, profile_udds_like(5, 900, 2.0), 0.6, NoiseSpec(0.005, 0.01, seed=5))
    clean = series.with_soc(None)
    clean.current = series.traces["current_true"]
    counted = coulomb_count(clean, CoulombConfig(params.capacity_c, 0.6))
    assert np.max(np.abs(counted.soc - series.soc)) <= 1e-9


def test_noise_seed_changes_channels_not_ground_truth():
    params = EcmBatteryParams()
    profile = profile_udds_like(1, 300, 10.0)
    a = simulate_battery(params, profile, 0.8, NoiseSpec(0.005, 0.01, seed=1))
    b = simulate_battery(params, profile, 0.8, NoiseSpec(0.005, 0.01, seed=2))
    assert np.array_equal(a.soc, b.soc)
    assert not np.array_equal(a.voltage, b.voltage)
    assert a.meta["noise_seed"] == 1


def test_battery_cutoff_at_start():
    with pytest.raises(CutoffAtStart):
        simulate_battery(EcmBatteryParams(), _constant(Phase.REST, 0.0, 10), 1.5)


# ── Supercapacitor ────────────────────────────────────────────────────

def test_sc_constant_discharge_slope():
    params = ScParams(capacitance=1.0, esr=0.1)
    series = simulate_sc(params, _constant(Phase.DISCHARGE, 0.02, 11), 1.0)
    assert np.allclose(np.diff(series.voltage), -0.02, rtol=0, atol=1e-12)
    assert series.voltage[0] == pytest.approx(2.7 - 0.002)


def test_sc_leakage_decays_exponentially():
    params = ScParams(capacitance=1.0, esr=0.1, leak_r=1000.0)
    series = simulate_sc(params, _constant(Phase.REST, 0.0, 501), 0.8)
    expected = 0.8 * 2.7 * np.exp(-500.0 / 1000.0)
    assert series.voltage[-1] == pytest.approx(expected, rel=1e-3)


def test_sc_electrical_power_never_exceeds_stored_power():
    params = ScParams(capacitance=25.0, esr=0.04)
    series = simulate_sc(params, profile_udds_like(2, 600, 0.1), 0.8)
    stored_v = series.traces["charge"] / params.capacitance
    assert np.all(series.voltage * series.current <= stored_v * series.current + 1e-12)


def test_sc_floor_at_start():
    with pytest.raises(CutoffAtStart):
        simulate_sc(ScParams(v_min=1.35), _constant(Phase.REST, 0.0, 10), 0.1)


def test_sc_discharge_stops_at_floor():
    params = ScParams(capacitance=1.0, esr=0.01, v_min=1.35)
    series = simulate_sc(params, _constant(Phase.DISCHARGE, 0.1, 100), 1.0)
    assert len(series) < 100
    assert series.voltage.min() >= 1.35 - 1e-9
