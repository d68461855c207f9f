"""
SOC estimation pipeline — preparation, cleansing, normalization,
charge/discharge segmentation, estimator fitting, closed-loop estimation
and MAE/RMSE evaluation.

Batteries get one network per regime (charge, discharge); supercapacitors
get a single network.  Estimates of consecutive regime segments are chained
through SOC0 so the combined full-cycle trace is continuous.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import (
    ChannelMismatch,
    DegenerateChannel,
    InvalidConfig,
    InvalidSoc0,
    LengthMismatch,
    MissingGroundTruth,
    NoSegments,
    TooManyOutliers,
)
from core.narx import (
    ClosedLoopState,
    NarxConfig,
    NarxNetwork,
    RegressorRows,
    build_open_loop_rows,
    init_network,
    predict_closed_loop,
)
from core.series import Device, SampleSeries
from core.trainer import TrainConfig, TrainReport, split_by_steps, split_rows, train_ann_baseline, train_narx

log = logging.getLogger("pipeline")

BUNDLE_FORMAT = "soc-bundle-v1"
CHANNELS = ("current", "voltage", "soc")
SOC_RANGE = (0.0, 1.0)


class Regime(str, Enum):
    CHARGE = "Charge"
    DISCHARGE = "Discharge"


class Soc0Policy(str, Enum):
    LAST_KNOWN = "LastKnown"
    PROVIDED = "Provided"


# ── Coulomb counting ──────────────────────────────────────────────────

@dataclass
class CoulombConfig:
    nominal_capacity: float      # coulombs
    soc_init: float = 1.0

    def __post_init__(self) -> None:
        if not self.nominal_capacity > 0:
            raise InvalidConfig("nominal_capacity must be positive")
        if not (0.0 <= self.soc_init <= 1.0):
            raise InvalidSoc0(f"soc_init must lie in [0, 1], got {self.soc_init}")

    @classmethod
    def from_ah(cls, capacity_ah: float, soc_init: float = 1.0) -> "CoulombConfig":
        return cls(capacity_ah * 3600.0, soc_init)


def coulomb_count(series: SampleSeries, cfg: CoulombConfig) -> SampleSeries:
    """
    SOC(t_k) = soc_init - (trapezoidal integral of I over [t_0, t_k]) / C_n,
    clamped to [0, 1].  The number of clamped samples is stored in
    ``meta["clamp_count"]``.
    """
    i = series.current
    charge = np.concatenate([[0.0], np.cumsum(0.5 * (i[1:] + i[:-1]) * np.diff(series.t))])
    raw = cfg.soc_init - charge / cfg.nominal_capacity
    clamped = np.clip(raw, 0.0, 1.0)
    n_clamped = int(np.count_nonzero(clamped != raw))
    if n_clamped:
        log.warning("coulomb counting clamped %d samples; check nominal capacity", n_clamped)
    out = series.with_soc(clamped)
    out.meta = {**series.meta, "clamp_count": n_clamped}
    return out


def prepare_series(series: SampleSeries, capacity_c: Optional[float] = None, soc_init: float = 1.0) -> SampleSeries:
    """Attach coulomb-counted ground truth when a dataset has no SOC channel."""
    if series.has_soc:
        return series
    capacity_c = capacity_c or series.meta.get("nominal_capacity_c")
    if not capacity_c:
        raise MissingGroundTruth("series has no soc and no nominal capacity to count from")
    return coulomb_count(series, CoulombConfig(float(capacity_c), soc_init))


# ── Cleansing ─────────────────────────────────────────────────────────

@dataclass
class CleanseRules:
    v_min: float = 0.0               # physical voltage bounds (V)
    v_max: float = math.inf
    current_ceiling: float = math.inf  # |I| limit (A)
    max_outlier_fraction: float = 0.10


@dataclass
class Removal:
    index: int
    channel: str
    reason: str

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "channel": self.channel, "reason": self.reason}


def _repair(values: np.ndarray, bad: np.ndarray) -> np.ndarray:
    good = np.flatnonzero(~bad)
    out = values.copy()
    # np.interp holds the end values outside the good range: nearest-value fill
    out[bad] = np.interp(np.flatnonzero(bad), good, values[good])
    return out


def cleanse(series: SampleSeries, rules: Optional[CleanseRules] = None) -> Tuple[SampleSeries, List[Removal]]:
    """
    Replace non-finite or out-of-bounds samples by linear interpolation of
    their neighbours; the timeline is unchanged.
    """
    rules = rules or CleanseRules()
    n = len(series)
    checks: Dict[str, List[Tuple[np.ndarray, str]]] = {
        "current": [
            (~np.isfinite(series.current), "non-finite"),
            (np.abs(np.nan_to_num(series.current)) > rules.current_ceiling, "current above ceiling"),
        ],
        "voltage": [
            (~np.isfinite(series.voltage), "non-finite"),
            (np.nan_to_num(series.voltage, nan=rules.v_min) <= rules.v_min, "voltage at or below bound"),
            (np.nan_to_num(series.voltage, nan=rules.v_min) > rules.v_max, "voltage above bound"),
        ],
    }
    if series.soc is not None:
        checks["soc"] = [(~np.isfinite(series.soc), "non-finite")]

    removals: List[Removal] = []
    flagged = np.zeros(n, dtype=bool)
    masks: Dict[str, np.ndarray] = {}
    for channel, tests in checks.items():
        mask = np.zeros(n, dtype=bool)
        for bad, reason in tests:
            for idx in np.flatnonzero(bad & ~mask):
                removals.append(Removal(int(idx), channel, reason))
            mask |= bad
        masks[channel] = mask
        flagged |= mask

    if flagged.sum() > rules.max_outlier_fraction * n:
        raise TooManyOutliers(f"{int(flagged.sum())} of {n} samples flagged")
    if not removals:
        return series, []

    repaired = {c: _repair(getattr(series, c), m) if m.any() else getattr(series, c) for c, m in masks.items()}
    removals.sort(key=lambda r: (r.index, r.channel))
    log.warning("cleansing replaced %d samples", int(flagged.sum()))
    out = replace(series, **repaired)
    return out, removals


# ── Normalization ─────────────────────────────────────────────────────

@dataclass
class NormStats:
    """Per-channel (min, max) used for the affine map to [-1, 1]."""

    ranges: Dict[str, Tuple[float, float]]

    def __post_init__(self) -> None:
        self.ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in self.ranges.items()}
        for name, (lo, hi) in self.ranges.items():
            if not (hi > lo) or not (math.isfinite(lo) and math.isfinite(hi)):
                raise DegenerateChannel(f"channel {name!r} has degenerate range [{lo}, {hi}]")

    @classmethod
    def from_series(cls, series: SampleSeries, stop: Optional[int] = None) -> "NormStats":
        """
        Current / voltage ranges from samples [0, stop); SOC always uses its
        physical range [0, 1].
        """
        part = slice(0, stop)
        return cls({
            "current": (float(np.min(series.current[part])), float(np.max(series.current[part]))),
            "voltage": (float(np.min(series.voltage[part])), float(np.max(series.voltage[part]))),
            "soc": SOC_RANGE,
        })

    def scale(self, channel: str, values: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        lo, hi = self.ranges[channel]
        return 2.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) - 1.0

    def unscale(self, channel: str, values: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        lo, hi = self.ranges[channel]
        return (np.asarray(values, dtype=float) + 1.0) * 0.5 * (hi - lo) + lo

    def to_dict(self) -> Dict[str, Any]:
        return {k: [lo, hi] for k, (lo, hi) in self.ranges.items()}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NormStats":
        return cls({k: (v[0], v[1]) for k, v in d.items()})


def normalize(series: SampleSeries, stats: NormStats) -> SampleSeries:
    """Affine map of every channel to [-1, 1]; out-of-range values are not clamped."""
    missing = [c for c in ("current", "voltage") if c not in stats.ranges]
    if missing or (series.soc is not None and "soc" not in stats.ranges):
        raise ChannelMismatch(f"normalization stats lack channels: {missing or ['soc']}")
    return replace(
        series,
        current=stats.scale("current", series.current),
        voltage=stats.scale("voltage", series.voltage),
        soc=None if series.soc is None else stats.scale("soc", series.soc),
        normalized=True,
    )


def denormalize_soc(value: Union[float, np.ndarray], stats: NormStats) -> Union[float, np.ndarray]:
    out = stats.unscale("soc", value)
    return float(out) if np.ndim(out) == 0 else out


# ── Segmentation ──────────────────────────────────────────────────────

@dataclass
class Segment:
    regime: Regime
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start

    def to_dict(self) -> Dict[str, Any]:
        return {"regime": self.regime.value, "start": self.start, "stop": self.stop}


def segment_by_regime(
    series: SampleSeries,
    min_length: int = 3,
    deadband: Optional[float] = None,
) -> List[Segment]:
    """
    Maximal runs of constant current sign (positive = Discharge).  Samples
    with |I| < deadband continue the previous regime (leading deadband
    samples join the first signed run).  Runs shorter than ``min_length``
    are merged into a neighbour.  ``deadband`` defaults to 1 % of the RMS
    current.
    """
    i = series.current
    if deadband is None:
        deadband = 0.01 * float(np.sqrt(np.mean(i * i)))
    active = (np.abs(i) >= deadband) & (i != 0)
    if not active.any():
        raise NoSegments("every sample lies inside the current deadband")

    labels = np.empty(len(i), dtype=object)
    current_regime = Regime.DISCHARGE if i[np.argmax(active)] > 0 else Regime.CHARGE
    for k in range(len(i)):
        if active[k]:
            current_regime = Regime.DISCHARGE if i[k] > 0 else Regime.CHARGE
        labels[k] = current_regime

    segments: List[Segment] = []
    start = 0
    for k in range(1, len(i) + 1):
        if k == len(i) or labels[k] != labels[start]:
            segments.append(Segment(labels[start], start, k))
            start = k

    # merge short runs into the previous segment (the first one into its successor)
    merged: List[Segment] = []
    for seg in segments:
        if merged and (len(seg) < min_length or len(merged[-1]) < min_length):
            prev = merged[-1]
            keep = prev.regime if len(prev) >= len(seg) else seg.regime
            merged[-1] = Segment(keep, prev.start, seg.stop)
        else:
            merged.append(seg)
    # adjacent segments can now share a regime
    out: List[Segment] = []
    for seg in merged:
        if out and out[-1].regime == seg.regime:
            out[-1] = Segment(seg.regime, out[-1].start, seg.stop)
        else:
            out.append(seg)
    return out


# ── Estimator bundle ──────────────────────────────────────────────────

@dataclass
class EstimatorBundle:
    """Trained network(s) + normalization for one device."""

    device: Device
    networks: Dict[str, NarxNetwork]    # "main" or "charge" / "discharge"
    norm: NormStats
    config: NarxConfig
    soc0_policy: Soc0Policy = Soc0Policy.LAST_KNOWN
    seed: int = 0
    deadband: Optional[float] = None

    def __post_init__(self) -> None:
        expected = {"charge", "discharge"} if self.device == Device.BATTERY else {"main"}
        if set(self.networks) != expected:
            raise InvalidConfig(f"{self.device.value} bundle needs networks {sorted(expected)}")
        for net in self.networks.values():
            if net.config != self.config:
                raise InvalidConfig("bundle networks must share the bundle configuration")
        missing = [c for c in CHANNELS if c not in self.norm.ranges]
        if missing:
            raise ChannelMismatch(f"normalization stats lack channels {missing}")

    @property
    def model(self) -> str:
        return self.config.model

    def network_for(self, regime: Optional[Regime]) -> NarxNetwork:
        if self.device == Device.SUPERCAPACITOR:
            return self.networks["main"]
        return self.networks["charge" if regime == Regime.CHARGE else "discharge"]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.networks):
            digest.update(name.encode())
            digest.update(self.networks[name].checksum().encode())
        digest.update(json.dumps(self.norm.to_dict(), sort_keys=True).encode())
        return digest.hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": BUNDLE_FORMAT,
            "device": self.device.value,
            "model": self.model,
            "config": self.config.to_dict(),
            "norm": self.norm.to_dict(),
            "soc0_policy": self.soc0_policy.value,
            "seed": self.seed,
            "deadband": self.deadband,
            "networks": {k: v.to_dict() for k, v in sorted(self.networks.items())},
            "checksum": self.checksum(),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "EstimatorBundle":
        if d.get("format") != BUNDLE_FORMAT:
            raise InvalidConfig(f"unsupported bundle format {d.get('format')!r}")
        return cls(
            device=Device(d["device"]),
            networks={k: NarxNetwork.from_dict(v) for k, v in d["networks"].items()},
            norm=NormStats.from_dict(d["norm"]),
            config=NarxConfig.from_dict(d["config"]),
            soc0_policy=Soc0Policy(d.get("soc0_policy", Soc0Policy.LAST_KNOWN.value)),
            seed=int(d.get("seed", 0)),
            deadband=d.get("deadband"),
        )


def _regime_rows(series: SampleSeries, segments: Sequence[Segment], regime: Regime, config: NarxConfig) -> RegressorRows:
    """Open-loop rows of every segment of one regime, concatenated in time order."""
    blocks = []
    for seg in segments:
        if seg.regime == regime and len(seg) > config.max_lag:
            rows = build_open_loop_rows(series.slice(seg.start, seg.stop), config)
            rows.steps = rows.steps + seg.start
            blocks.append(rows)
    if not blocks:
        raise NoSegments(f"no {regime.value.lower()} segment long enough to train on")
    return RegressorRows.concat(blocks)


def fit_estimator(
    series: SampleSeries,
    device: Optional[Device] = None,
    narx_cfg: Optional[NarxConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    rules: Optional[CleanseRules] = None,
    model: str = "narx",
) -> Tuple[EstimatorBundle, Dict[str, TrainReport]]:
    """
    cleanse -> training-portion NormStats -> normalize -> (battery: segment)
    -> open-loop rows -> split -> LM training.  ``model="ann"`` trains the
    feedforward baseline through the same path.
    """
    if series.soc is None:
        raise MissingGroundTruth("fitting needs the soc channel")
    device = Device(device or series.device)
    narx_cfg = narx_cfg or NarxConfig()
    train_cfg = train_cfg or TrainConfig()
    net_cfg = narx_cfg.feedforward() if model == "ann" and narx_cfg.model != "ann" else narx_cfg

    clean, _ = cleanse(series, rules)
    clean.check_values()
    # one timeline split shared by the norm stats, every network's rows and the holdout window
    timeline = split_rows(len(clean), train_cfg)
    norm = NormStats.from_series(clean, stop=timeline.train.stop)
    scaled = normalize(clean, norm)

    if device == Device.BATTERY:
        deadband = 0.01 * float(np.sqrt(np.mean(clean.current ** 2)))
        segments = segment_by_regime(clean, min_length=net_cfg.max_lag + 1, deadband=deadband)
        jobs = {
            "charge": _regime_rows(scaled, segments, Regime.CHARGE, net_cfg),
            "discharge": _regime_rows(scaled, segments, Regime.DISCHARGE, net_cfg),
        }
    else:
        deadband = None
        jobs = {"main": build_open_loop_rows(scaled, net_cfg)}

    networks: Dict[str, NarxNetwork] = {}
    reports: Dict[str, TrainReport] = {}
    for name, rows in jobs.items():
        split = split_by_steps(rows, timeline)
        log.info("training %s %s network on %d rows (split %s)", model, name, len(rows), split.sizes())
        if net_cfg.model == "ann":
            networks[name], reports[name] = train_ann_baseline(rows, train_cfg, split=split)
        else:
            net = init_network(net_cfg, seed=train_cfg.seed)
            networks[name], reports[name] = train_narx(net, rows, train_cfg, split=split)

    bundle = EstimatorBundle(
        device=device,
        networks=networks,
        norm=norm,
        config=net_cfg,
        seed=train_cfg.seed,
        deadband=deadband,
    )
    return bundle, reports


def estimate_soc(
    bundle: EstimatorBundle,
    series: SampleSeries,
    soc0: Union[float, Sequence[float]],
    n0: Optional[int] = None,
) -> np.ndarray:
    """
    Closed-loop SOC estimate (fraction, clamped to [0, 1]).

    Batteries are split into regime segments, each run with its regime's
    network; under LastKnown each segment is seeded with the previous
    segment's last estimate.  Under Provided, ``soc0`` holds one value per
    segment.
    """
    return estimate_soc_detailed(bundle, series, soc0, n0)[0]


def estimate_soc_detailed(
    bundle: EstimatorBundle,
    series: SampleSeries,
    soc0: Union[float, Sequence[float]],
    n0: Optional[int] = None,
) -> Tuple[np.ndarray, List[Segment]]:
    if series.inputs().shape[1] != bundle.config.input_channels:
        raise ChannelMismatch("series channels do not match the bundle")
    series.check_values()
    scaled = normalize(series.without_soc(), bundle.norm)

    if bundle.device == Device.BATTERY:
        segments = segment_by_regime(series, min_length=bundle.config.max_lag + 1, deadband=bundle.deadband)
    else:
        segments = [Segment(Regime.DISCHARGE, 0, len(series))]

    seeds: List[float]
    if bundle.soc0_policy == Soc0Policy.PROVIDED:
        seeds = [float(s) for s in np.atleast_1d(soc0)]
        if len(seeds) != len(segments):
            raise InvalidSoc0(f"Provided policy needs {len(segments)} soc0 values, got {len(seeds)}")
    else:
        seeds = [float(np.atleast_1d(soc0)[0])]

    out = np.empty(len(series))
    for k, seg in enumerate(segments):
        start_soc = seeds[k] if k < len(seeds) else float(out[seg.start - 1])
        net = bundle.network_for(seg.regime if bundle.device == Device.BATTERY else None)
        state = ClosedLoopState.start(
            net.config,
            soc0=start_soc,
            n0=n0,
            feedback0=float(bundle.norm.scale("soc", start_soc)),
        )
        raw = predict_closed_loop(net, scaled.slice(seg.start, seg.stop), state)
        out[seg.start:seg.stop] = np.clip(denormalize_soc(raw, bundle.norm), 0.0, 1.0)
    return out, segments


# ── Metrics ───────────────────────────────────────────────────────────

@dataclass
class Metrics:
    mae_pct: float
    rmse_pct: float
    n_points: int

    def to_dict(self) -> Dict[str, Any]:
        return {"mae_pct": self.mae_pct, "rmse_pct": self.rmse_pct, "n_points": self.n_points}


def evaluate(actual: np.ndarray, estimated: np.ndarray, exclude_warmup: int = 0) -> Metrics:
    """MAE and RMSE in percentage points of SOC (inputs are fractions)."""
    a = np.asarray(actual, dtype=float)
    e = np.asarray(estimated, dtype=float)
    if a.shape != e.shape:
        raise LengthMismatch(f"actual has {a.size} points, estimate has {e.size}")
    a, e = a[exclude_warmup:], e[exclude_warmup:]
    if a.size < 1:
        raise LengthMismatch("nothing to evaluate")
    err = a - e
    mae = 100.0 * float(np.mean(np.abs(err)))
    rmse = 100.0 * float(np.sqrt(np.mean(err * err)))
    return Metrics(mae_pct=mae, rmse_pct=rmse, n_points=int(a.size))


def holdout_window(n_samples: int, config: TrainConfig) -> slice:
    """The test block of the timeline split ``fit_estimator`` trains with."""
    return slice(split_rows(n_samples, config).test.start, n_samples)


def metrics_report(
    actual: np.ndarray,
    estimated: np.ndarray,
    segments: Sequence[Segment] = (),
    clamp_count: int = 0,
    window: Optional[slice] = None,
    exclude_warmup: int = 0,
) -> Dict[str, Any]:
    """Overall metrics, optional evaluation window, and a per-segment breakdown."""
    overall = evaluate(actual, estimated, exclude_warmup)
    report: Dict[str, Any] = {**overall.to_dict(), "clamp_count": int(clamp_count)}
    if window is not None:
        report["window"] = {
            "start": window.start,
            "stop": window.stop,
            **evaluate(actual[window], estimated[window]).to_dict(),
        }
    report["segments"] = [
        {**seg.to_dict(), **evaluate(actual[seg.start:seg.stop], estimated[seg.start:seg.stop]).to_dict()}
        for seg in segments
    ]
    return report
