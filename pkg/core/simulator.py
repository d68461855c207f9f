"""
Equivalent-circuit simulator for the hybrid pack.

Battery: first-order Thevenin model (R0 + one R1||C1 pair) over a
piecewise-linear OCV curve.  Supercapacitor: ideal capacitor with ESR and an
optional self-discharge resistor.  Both log ground-truth SOC from the
trapezoidal charge integral of the logged current (the same rule
``core.pipeline.coulomb_count`` uses), with sensor noise added to the logged
current / voltage only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.errors import CutoffAtStart, InvalidConfig, InvalidSpec
from core.series import Device, Phase, SampleSeries

log = logging.getLogger("simulator")

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"
DEFAULT_OCV_FILE = PRESET_DIR / "ocv_default.csv"

_CHARGE_PHASES = (Phase.CC_CHARGE, Phase.CV_CHARGE)


# ── OCV curve ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class OcvCurve:
    """Strictly increasing piecewise-linear map SOC in [0, 1] -> volts."""

    soc: Tuple[float, ...]
    volts: Tuple[float, ...]

    def __post_init__(self) -> None:
        s, v = np.asarray(self.soc, dtype=float), np.asarray(self.volts, dtype=float)
        if len(s) < 2 or len(s) != len(v):
            raise InvalidConfig("OCV curve needs at least two matching knots")
        if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
            raise InvalidConfig("OCV knots must increase strictly from 0 to 1")
        if np.any(np.diff(v) <= 0):
            raise InvalidConfig("OCV curve must be strictly increasing")
        object.__setattr__(self, "soc", tuple(float(x) for x in s))
        object.__setattr__(self, "volts", tuple(float(x) for x in v))

    def __call__(self, soc: float) -> float:
        return float(np.interp(soc, self.soc, self.volts))

    def slope(self, soc: float) -> float:
        """dOCV/dSOC of the segment containing ``soc``."""
        i = int(np.clip(np.searchsorted(self.soc, soc, side="right") - 1, 0, len(self.soc) - 2))
        return (self.volts[i + 1] - self.volts[i]) / (self.soc[i + 1] - self.soc[i])

    def to_dict(self) -> Dict[str, Any]:
        return {"soc": list(self.soc), "volts": list(self.volts)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "OcvCurve":
        return cls(tuple(d["soc"]), tuple(d["volts"]))

    @classmethod
    def from_csv(cls, path: Path = DEFAULT_OCV_FILE) -> "OcvCurve":
        df = pd.read_csv(path, comment="#")
        return cls(tuple(df["soc"]), tuple(df["ocv"]))


def default_ocv() -> OcvCurve:
    return OcvCurve.from_csv(DEFAULT_OCV_FILE)


# ── Device parameters ─────────────────────────────────────────────────

@dataclass
class EcmBatteryParams:
    """Thevenin battery parameters.  Defaults describe a 7.08 Ah cell cycled 2.5-4.2 V."""

    capacity_ah: float = 7.08
    r0: float = 0.010               # series resistance (ohm)
    r1: float = 0.005               # polarization resistance (ohm)
    c1: float = 2000.0              # polarization capacitance (F)
    ocv_curve: OcvCurve = field(default_factory=default_ocv)
    v_min: float = 2.5
    v_max: float = 4.2
    temperature_tag: str = "25C"

    def __post_init__(self) -> None:
        if min(self.capacity_ah, self.r0, self.r1, self.c1) <= 0:
            raise InvalidConfig("capacity, r0, r1 and c1 must be positive")
        if self.v_min >= self.v_max:
            raise InvalidConfig("v_min must be below v_max")

    @property
    def capacity_c(self) -> float:
        return self.capacity_ah * 3600.0

    def shifted(self, capacity_scale: float, resistance_scale: float, temperature_tag: str) -> "EcmBatteryParams":
        """Temperature preset: scale capacity and both resistances."""
        return replace(
            self,
            capacity_ah=self.capacity_ah * capacity_scale,
            r0=self.r0 * resistance_scale,
            r1=self.r1 * resistance_scale,
            temperature_tag=temperature_tag,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["ocv_curve"] = self.ocv_curve.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "EcmBatteryParams":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if isinstance(d.get("ocv_curve"), dict):
            d["ocv_curve"] = OcvCurve.from_dict(d["ocv_curve"])
        elif isinstance(d.get("ocv_curve"), str):
            d["ocv_curve"] = OcvCurve.from_csv(PRESET_DIR / d["ocv_curve"])
        return cls(**d)


@dataclass
class ScParams:
    """Supercapacitor: capacitance + ESR + leakage path.  SOC = Q / (C * v_rated)."""

    capacitance: float = 25.0       # F
    esr: float = 0.02               # ohm
    leak_r: float = math.inf        # ohm; inf disables self-discharge
    v_rated: float = 2.7            # V
    v_min: float = 0.0              # discharge floor (V)
    temperature_tag: str = "25C"

    def __post_init__(self) -> None:
        if self.leak_r is None:
            self.leak_r = math.inf
        if min(self.capacitance, self.esr, self.leak_r, self.v_rated) <= 0:
            raise InvalidConfig("capacitance, esr, leak_r and v_rated must be positive")
        if not (0 <= self.v_min < self.v_rated):
            raise InvalidConfig("v_min must lie in [0, v_rated)")

    @property
    def capacity_c(self) -> float:
        return self.capacitance * self.v_rated

    def shifted(self, capacity_scale: float, resistance_scale: float, temperature_tag: str) -> "ScParams":
        return replace(
            self,
            capacitance=self.capacitance * capacity_scale,
            esr=self.esr * resistance_scale,
            temperature_tag=temperature_tag,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        if math.isinf(self.leak_r):
            d["leak_r"] = None
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScParams":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class NoiseSpec:
    sigma_v: float = 0.0    # volts
    sigma_i: float = 0.0    # amperes
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_v < 0 or self.sigma_i < 0:
            raise InvalidConfig("noise standard deviations must be non-negative")


# ── Current profiles ──────────────────────────────────────────────────

@dataclass
class CurrentProfile:
    """
    Applied current per sample with phase labels.

    CV_charge samples hold the charge-rate bound (negative); the simulator
    solves the actual CV current.
    """

    dt: float
    samples: np.ndarray
    phase_labels: np.ndarray
    cv_voltage: Optional[float] = None
    cv_cutoff_current: float = 0.0

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        self.phase_labels = np.asarray([Phase(p) for p in self.phase_labels], dtype=object)
        if self.dt <= 0:
            raise InvalidSpec("profile dt must be positive")
        if len(self.samples) != len(self.phase_labels):
            raise InvalidSpec("samples and phase labels differ in length")
        if any(p == Phase.CV_CHARGE for p in self.phase_labels) and self.cv_voltage is None:
            raise InvalidSpec("CV phases need a cv_voltage")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt

    def phases(self) -> List[Tuple[Phase, int, int]]:
        """Contiguous (phase, start, stop) runs."""
        runs: List[Tuple[Phase, int, int]] = []
        start = 0
        for i in range(1, len(self.phase_labels) + 1):
            if i == len(self.phase_labels) or self.phase_labels[i] != self.phase_labels[start]:
                runs.append((self.phase_labels[start], start, i))
                start = i
        return runs


@dataclass
class CccvSpec:
    """CC+CV charge, rest, constant-current discharge; currents are magnitudes (A)."""

    cc_current: float = 0.0         # 0 skips the charge phases
    cv_voltage: Optional[float] = None
    cv_cutoff_current: float = 0.0
    rest_s: float = 0.0
    discharge_current: float = 0.0  # 0 skips the discharge phase
    dt: float = 1.0
    cc_max_s: float = 7200.0
    cv_max_s: float = 3600.0
    discharge_max_s: float = 7200.0
    cycles: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CccvSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class UddsSpec:
    duration_s: float = 3600.0
    peak_current: float = 10.0
    dt: float = 1.0
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "UddsSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _n_samples(seconds: float, dt: float) -> int:
    return int(math.ceil(seconds / dt - 1e-9))


def profile_cccv(spec: CccvSpec) -> CurrentProfile:
    """CC_charge -> CV_charge -> Rest -> Discharge, repeated ``cycles`` times."""
    if spec.dt <= 0 or spec.cycles < 1:
        raise InvalidSpec("dt must be positive and cycles >= 1")
    if min(spec.cc_current, spec.discharge_current, spec.rest_s, spec.cv_cutoff_current) < 0:
        raise InvalidSpec("currents and durations are magnitudes and must be non-negative")
    use_cv = spec.cc_current > 0 and spec.cv_voltage is not None and spec.cv_max_s > 0

    blocks: List[Tuple[Phase, int, float]] = []
    if spec.cc_current > 0:
        blocks.append((Phase.CC_CHARGE, _n_samples(spec.cc_max_s, spec.dt), -spec.cc_current))
    if use_cv:
        blocks.append((Phase.CV_CHARGE, _n_samples(spec.cv_max_s, spec.dt), -spec.cc_current))
    if spec.rest_s > 0:
        blocks.append((Phase.REST, _n_samples(spec.rest_s, spec.dt), 0.0))
    if spec.discharge_current > 0:
        blocks.append((Phase.DISCHARGE, _n_samples(spec.discharge_max_s, spec.dt), spec.discharge_current))
    blocks = [b for b in blocks if b[1] > 0]
    if not blocks:
        raise InvalidSpec("CC+CV spec produces no phases")

    samples: List[float] = []
    labels: List[Phase] = []
    for _ in range(spec.cycles):
        for phase, n, current in blocks:
            samples.extend([current] * n)
            labels.extend([phase] * n)

    return CurrentProfile(
        dt=spec.dt,
        samples=np.array(samples),
        phase_labels=np.array(labels, dtype=object),
        cv_voltage=spec.cv_voltage if use_cv else None,
        cv_cutoff_current=spec.cv_cutoff_current,
    )


def profile_udds_like(seed: int, duration: float, peak_current: float, dt: float = 1.0) -> CurrentProfile:
    """
    Seeded drive-cycle-shaped profile: discharge bursts, regenerative
    (negative) pulses and idle gaps, with slew limited to peak/4 per second.

    The first regenerative pulse always starts within 30 s, so any duration
    of 60 s or more contains both current signs.  Magnitudes are shape-only;
    they do not reproduce a measured drive cycle.
    """
    if duration <= 0 or dt <= 0:
        raise InvalidSpec("duration and dt must be positive")
    if peak_current <= 0:
        raise InvalidSpec("peak_current must be positive")

    rng = np.random.default_rng(seed)
    n_total = _n_samples(duration, dt)
    slew = peak_current / 4.0 * dt     # max change per sample

    samples: List[float] = []
    labels: List[Phase] = []

    def pulse(level: float, hold_s: float) -> None:
        n_ramp = max(1, int(math.ceil(abs(level) / slew - 1e-12)))
        n_hold = max(1, int(round(hold_s / dt)))
        ramp_up = [level * (i + 1) / n_ramp for i in range(n_ramp)]
        ramp_down = [level * (n_ramp - 1 - i) / n_ramp for i in range(n_ramp)]
        values = ramp_up + [level] * n_hold + ramp_down
        samples.extend(values)
        labels.extend([Phase.DRIVE] * len(values))

    while len(samples) < n_total:
        pulse(rng.uniform(0.3, 1.0) * peak_current, rng.uniform(5.0, 15.0))
        pulse(-rng.uniform(0.15, 0.6) * peak_current, rng.uniform(2.0, 8.0))
        n_idle = max(1, int(round(rng.uniform(2.0, 10.0) / dt)))
        samples.extend([0.0] * n_idle)
        labels.extend([Phase.REST] * n_idle)

    return CurrentProfile(
        dt=dt,
        samples=np.clip(np.array(samples[:n_total]), -peak_current, peak_current),
        phase_labels=np.array(labels[:n_total], dtype=object),
    )


# ── Cell models ───────────────────────────────────────────────────────

class _BatteryCell:
    """Thevenin state (soc, v_rc) with trapezoidal charge and Euler RC update."""

    def __init__(self, p: EcmBatteryParams, dt: float, soc_init: float) -> None:
        self.p, self.dt = p, dt
        self.cn = p.capacity_c
        self.soc, self.v_rc = soc_init, 0.0

    def propose(self, i_prev: Optional[float], i: float) -> Tuple[float, float]:
        if i_prev is None:
            return self.soc, self.v_rc
        p, dt = self.p, self.dt
        soc = self.soc - dt * (i_prev + i) / (2.0 * self.cn)
        v_rc = self.v_rc + dt * (i_prev / p.c1 - self.v_rc / (p.r1 * p.c1))
        return soc, v_rc

    def terminal(self, state: Tuple[float, float], i: float) -> float:
        soc, v_rc = state
        return self.p.ocv_curve(soc) - i * self.p.r0 - v_rc

    def cv_current(self, i_prev: Optional[float], v_cv: float) -> float:
        """Current that holds the terminal voltage at ``v_cv`` (OCV linearized at the present SOC)."""
        p, dt = self.p, self.dt
        ocv = p.ocv_curve(self.soc)
        if i_prev is None:
            return (ocv - self.v_rc - v_cv) / p.r0
        _, v_rc = self.propose(i_prev, 0.0)
        k = p.ocv_curve.slope(self.soc) * dt / (2.0 * self.cn)
        return (ocv - k * i_prev - v_rc - v_cv) / (p.r0 + k)

    def commit(self, state: Tuple[float, float]) -> None:
        self.soc, self.v_rc = state

    def soc_of(self, state: Tuple[float, float]) -> float:
        return state[0]

    def traces(self, state: Tuple[float, float]) -> Dict[str, float]:
        return {"ocv": self.p.ocv_curve(state[0]), "v_rc": state[1]}

    @property
    def limits(self) -> Tuple[float, float]:
        return self.p.v_min, self.p.v_max


class _ScCell:
    """Stored charge Q on C with ESR drop and leakage through leak_r."""

    def __init__(self, p: ScParams, dt: float, soc_init: float) -> None:
        self.p, self.dt = p, dt
        self.q = soc_init * p.capacity_c

    def _leak(self) -> float:
        return self.dt * (self.q / self.p.capacitance) / self.p.leak_r

    def propose(self, i_prev: Optional[float], i: float) -> float:
        if i_prev is None:
            return self.q
        return self.q - self.dt * (i_prev + i) / 2.0 - self._leak()

    def terminal(self, q: float, i: float) -> float:
        return q / self.p.capacitance - i * self.p.esr

    def cv_current(self, i_prev: Optional[float], v_cv: float) -> float:
        p, dt = self.p, self.dt
        if i_prev is None:
            return (self.q / p.capacitance - v_cv) / p.esr
        q_base = self.q - dt * i_prev / 2.0 - self._leak()
        return (q_base / p.capacitance - v_cv) / (p.esr + dt / (2.0 * p.capacitance))

    def commit(self, q: float) -> None:
        self.q = q

    def soc_of(self, q: float) -> float:
        return q / self.p.capacity_c

    def traces(self, q: float) -> Dict[str, float]:
        return {"charge": q}

    @property
    def limits(self) -> Tuple[float, float]:
        return self.p.v_min, self.p.v_rated


def _run(
    cell: Any,
    profile: CurrentProfile,
    device: Device,
    noise: NoiseSpec,
    meta: Dict[str, Any],
) -> SampleSeries:
    v_lo, v_hi = cell.limits
    # CC charging hands over to CV at the CV setpoint
    v_cc = min(v_hi, profile.cv_voltage) if profile.cv_voltage is not None else v_hi
    tol = 1e-9
    currents: List[float] = []
    volts: List[float] = []
    socs: List[float] = []
    phases: List[Phase] = []
    extra: Dict[str, List[float]] = {}
    i_prev: Optional[float] = None

    for phase, start, stop in profile.phases():
        halted = False
        for k in range(start, stop):
            i = float(profile.samples[k])
            if phase == Phase.CV_CHARGE:
                i = min(0.0, max(cell.cv_current(i_prev, profile.cv_voltage), i))
                if abs(i) < profile.cv_cutoff_current:
                    halted = True
            if not halted:
                state = cell.propose(i_prev, i)
                v = cell.terminal(state, i)
                soc = cell.soc_of(state)
                if soc < -tol or soc > 1 + tol:
                    halted = True
                elif phase in (Phase.DISCHARGE, Phase.DRIVE, Phase.REST) and v < v_lo - tol:
                    halted = True
                elif phase == Phase.CC_CHARGE and v > v_cc + tol:
                    halted = True
                elif phase in (Phase.DRIVE, Phase.REST) and v > v_hi + tol:
                    halted = True
            if halted:
                log.debug("%s phase halted at sample %d of %d", phase.value, k - start, stop - start)
                break
            cell.commit(state)
            currents.append(i)
            volts.append(v)
            socs.append(soc)
            phases.append(phase)
            for name, value in cell.traces(state).items():
                extra.setdefault(name, []).append(value)
            i_prev = i

    n = len(currents)
    rng = np.random.default_rng(noise.seed)
    current_true = np.array(currents)
    voltage_true = np.array(volts)
    current_noise = rng.normal(0.0, noise.sigma_i, n) if noise.sigma_i > 0 else np.zeros(n)
    voltage_noise = rng.normal(0.0, noise.sigma_v, n) if noise.sigma_v > 0 else np.zeros(n)

    traces = {k: np.array(v) for k, v in extra.items()}
    traces["current_true"] = current_true
    traces["voltage_true"] = voltage_true

    log.info("%s simulated: %d of %d profile samples", device.value, n, len(profile))
    return SampleSeries(
        t=np.arange(n) * profile.dt,
        current=current_true + current_noise,
        voltage=voltage_true + voltage_noise,
        soc=np.array(socs),
        device=device,
        phase=np.array(phases, dtype=object),
        meta={**meta, "noise_seed": noise.seed, "sigma_v": noise.sigma_v, "sigma_i": noise.sigma_i},
        traces=traces,
    )


def simulate_battery(
    params: EcmBatteryParams,
    profile: CurrentProfile,
    soc_init: float,
    noise: Optional[NoiseSpec] = None,
) -> SampleSeries:
    """
    Forward-Euler Thevenin simulation.  A phase stops early when a cutoff is
    reached; CV phases also stop once |I| falls below the profile's cutoff.
    """
    if not (0.0 <= soc_init <= 1.0):
        raise CutoffAtStart(f"soc_init {soc_init} outside [0, 1]")
    ocv = params.ocv_curve(soc_init)
    if ocv < params.v_min or ocv > params.v_max:
        raise CutoffAtStart(f"OCV {ocv:.3f} V at soc_init violates {params.v_min}-{params.v_max} V")
    meta = {
        "nominal_capacity_c": params.capacity_c,
        "temperature_tag": params.temperature_tag,
        "soc_init": soc_init,
    }
    cell = _BatteryCell(params, profile.dt, soc_init)
    return _run(cell, profile, Device.BATTERY, noise or NoiseSpec(), meta)


def simulate_sc(
    params: ScParams,
    profile: CurrentProfile,
    soc_init: float,
    noise: Optional[NoiseSpec] = None,
) -> SampleSeries:
    """Supercapacitor simulation with the same phase / cutoff handling as the battery."""
    if not (0.0 <= soc_init <= 1.0):
        raise CutoffAtStart(f"soc_init {soc_init} outside [0, 1]")
    v_oc = soc_init * params.v_rated
    if v_oc < params.v_min:
        raise CutoffAtStart(f"open-circuit voltage {v_oc:.3f} V below floor {params.v_min} V")
    meta = {
        "nominal_capacity_c": params.capacity_c,
        "temperature_tag": params.temperature_tag,
        "soc_init": soc_init,
    }
    cell = _ScCell(params, profile.dt, soc_init)
    return _run(cell, profile, Device.SUPERCAPACITOR, noise or NoiseSpec(), meta)
