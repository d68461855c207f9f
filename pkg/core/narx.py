"""
NARX network engine — regressor construction, forward evaluation and the
open-loop / closed-loop prediction modes.

Regressor layout (fixed, also the serialized layout)::

    [ y(n-k) for k in output_delays ]      ascending lags
    [ I(n-k) for k in input_delays ]       ascending lags
    [ V(n-k) for k in input_delays ]       ascending lags

The network is one tanh hidden layer followed by a linear output unit.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import (
    DimensionMismatch,
    InvalidConfig,
    InvalidSoc0,
    MissingGroundTruth,
    SeriesTooShort,
)
from core.series import SampleSeries

NARX_FORMAT = "narx-v1"
MODELS = ("narx", "ann")


def parse_delays(text: str) -> Tuple[int, ...]:
    """
    Parse a delay spec: ``"1:2"`` (inclusive range), ``"1,3,4"`` or ``"2"``.
    """
    text = text.strip()
    if ":" in text:
        lo, hi = (int(p) for p in text.split(":", 1))
        return tuple(range(lo, hi + 1))
    return tuple(int(p) for p in text.split(",") if p.strip())


# ── Configuration ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class NarxConfig:
    """Delay orders and size of a NARX (or feedforward ANN) network."""

    input_delays: Tuple[int, ...] = (1, 2)    # d_x lags on current and voltage
    output_delays: Tuple[int, ...] = (1, 2)   # d_y lags on the fed-back SOC
    hidden_neurons: int = 16
    input_channels: int = 2                   # current, voltage
    model: str = "narx"                       # "ann" drops the output feedback

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_delays", tuple(sorted(set(int(k) for k in self.input_delays))))
        object.__setattr__(self, "output_delays", tuple(sorted(set(int(k) for k in self.output_delays))))

        if self.model not in MODELS:
            raise InvalidConfig(f"unknown model {self.model!r}")
        if not self.input_delays:
            raise InvalidConfig("input_delays must not be empty")
        if self.model == "narx" and not self.output_delays:
            raise InvalidConfig("a NARX network needs at least one output delay")
        if self.model == "ann" and self.output_delays:
            raise InvalidConfig("a feedforward network has no output delays")
        if min(self.input_delays + self.output_delays) < 1:
            raise InvalidConfig("all lags must be >= 1")
        if self.hidden_neurons < 1:
            raise InvalidConfig("hidden_neurons must be >= 1")
        if self.input_channels < 1:
            raise InvalidConfig("input_channels must be >= 1")

    @property
    def max_lag(self) -> int:
        return max(self.input_delays + self.output_delays)

    @property
    def regressor_len(self) -> int:
        return self.input_channels * len(self.input_delays) + len(self.output_delays)

    @property
    def n_parameters(self) -> int:
        h = self.hidden_neurons
        return h * self.regressor_len + 2 * h + 1

    def feedforward(self) -> "NarxConfig":
        """The same network without output feedback (the ANN baseline)."""
        return NarxConfig(
            input_delays=self.input_delays,
            output_delays=(),
            hidden_neurons=self.hidden_neurons,
            input_channels=self.input_channels,
            model="ann",
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_delays": list(self.input_delays),
            "output_delays": list(self.output_delays),
            "hidden_neurons": self.hidden_neurons,
            "input_channels": self.input_channels,
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NarxConfig":
        d = dict(d)
        for key in ("input_delays", "output_delays"):
            if isinstance(d.get(key), str):
                d[key] = parse_delays(d[key])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ── Network ───────────────────────────────────────────────────────────

@dataclass
class NarxNetwork:
    """
    Weights of a one-hidden-layer NARX network.

    Treated as immutable: training produces new instances through
    ``with_parameters``.  Flat parameter order is hidden_weights (row-major),
    hidden_bias, output_weights, output_bias.
    """

    config: NarxConfig
    hidden_weights: np.ndarray   # [hidden_neurons x regressor_len]
    hidden_bias: np.ndarray      # [hidden_neurons]
    output_weights: np.ndarray   # [hidden_neurons]
    output_bias: float

    def __post_init__(self) -> None:
        h, r = self.config.hidden_neurons, self.config.regressor_len
        self.hidden_weights = np.array(self.hidden_weights, dtype=float)
        if self.hidden_weights.ndim == 1 and self.hidden_weights.size == h * r:
            self.hidden_weights = self.hidden_weights.reshape(h, r)
        self.hidden_bias = np.array(self.hidden_bias, dtype=float)
        self.output_weights = np.array(self.output_weights, dtype=float)
        self.output_bias = float(self.output_bias)

        if self.hidden_weights.shape != (h, r):
            raise DimensionMismatch(f"hidden_weights shape {self.hidden_weights.shape}, expected {(h, r)}")
        if self.hidden_bias.shape != (h,) or self.output_weights.shape != (h,):
            raise DimensionMismatch(f"bias / output weights must have {h} entries")
        if not np.all(np.isfinite(self.parameters())):
            raise InvalidConfig("network weights must be finite")

        for arr in (self.hidden_weights, self.hidden_bias, self.output_weights):
            arr.setflags(write=False)

    # ── Parameter vector ──────────────────────────────────────────────

    def parameters(self) -> np.ndarray:
        return np.concatenate([
            self.hidden_weights.ravel(),
            self.hidden_bias,
            self.output_weights,
            [self.output_bias],
        ])

    def with_parameters(self, theta: np.ndarray) -> "NarxNetwork":
        cfg = self.config
        h, r = cfg.hidden_neurons, cfg.regressor_len
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (cfg.n_parameters,):
            raise DimensionMismatch(f"parameter vector has {theta.size} entries, expected {cfg.n_parameters}")
        i = h * r
        return NarxNetwork(
            config=cfg,
            hidden_weights=theta[:i].reshape(h, r).copy(),
            hidden_bias=theta[i:i + h].copy(),
            output_weights=theta[i + h:i + 2 * h].copy(),
            output_bias=float(theta[-1]),
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        digest.update(np.ascontiguousarray(self.parameters(), dtype="<f8").tobytes())
        return digest.hexdigest()

    # ── Serialization ─────────────────────────────────────────────────

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": NARX_FORMAT,
            "config": self.config.to_dict(),
            "hidden_weights": self.hidden_weights.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": self.output_bias,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NarxNetwork":
        if d.get("format") != NARX_FORMAT:
            raise InvalidConfig(f"unsupported network format {d.get('format')!r}")
        return cls(
            config=NarxConfig.from_dict(d["config"]),
            hidden_weights=np.array(d["hidden_weights"], dtype=float),
            hidden_bias=np.array(d["hidden_bias"], dtype=float),
            output_weights=np.array(d["output_weights"], dtype=float),
            output_bias=float(d["output_bias"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NarxNetwork":
        return cls.from_dict(json.loads(text))

    @classmethod
    def zeros(cls, config: NarxConfig) -> "NarxNetwork":
        h, r = config.hidden_neurons, config.regressor_len
        return cls(config, np.zeros((h, r)), np.zeros(h), np.zeros(h), 0.0)


def init_network(config: NarxConfig, seed: int = 0) -> NarxNetwork:
    """Uniform [-0.5, 0.5] / sqrt(regressor_len) weights from a seeded generator."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(config.regressor_len)
    h, r = config.hidden_neurons, config.regressor_len
    return NarxNetwork(
        config=config,
        hidden_weights=rng.uniform(-0.5, 0.5, size=(h, r)) * scale,
        hidden_bias=rng.uniform(-0.5, 0.5, size=h) * scale,
        output_weights=rng.uniform(-0.5, 0.5, size=h) * scale,
        output_bias=0.0,
    )


# ── Regressor rows ────────────────────────────────────────────────────

@dataclass
class RegressorRow:
    values: np.ndarray
    target: Optional[float] = None
    step: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"values": np.asarray(self.values, dtype=float).tolist(), "target": self.target, "step": self.step}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RegressorRow":
        target = d.get("target")
        return cls(np.array(d["values"], dtype=float), None if target is None else float(target), int(d["step"]))


@dataclass
class RegressorRows:
    """A block of regressor rows stored as one matrix (row i = step ``steps[i]``)."""

    config: NarxConfig
    values: np.ndarray                    # [m x regressor_len]
    targets: Optional[np.ndarray] = None  # [m]
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> RegressorRow:
        target = None if self.targets is None else float(self.targets[i])
        return RegressorRow(self.values[i], target, int(self.steps[i]))

    def __iter__(self) -> Iterator[RegressorRow]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index: Union[slice, np.ndarray, range]) -> "RegressorRows":
        if isinstance(index, range):
            index = slice(index.start, index.stop)
        return RegressorRows(
            config=self.config,
            values=self.values[index],
            targets=None if self.targets is None else self.targets[index],
            steps=self.steps[index],
        )

    def without_feedback(self) -> "RegressorRows":
        """Drop the output-lag columns, leaving the feedforward (ANN) regressor."""
        n_y = len(self.config.output_delays)
        cfg = self.config if self.config.model == "ann" else self.config.feedforward()
        return RegressorRows(cfg, self.values[:, n_y:], self.targets, self.steps)

    @classmethod
    def concat(cls, blocks: Sequence["RegressorRows"]) -> "RegressorRows":
        if not blocks:
            raise DimensionMismatch("nothing to concatenate")
        return cls(
            config=blocks[0].config,
            values=np.vstack([b.values for b in blocks]),
            targets=np.concatenate([b.targets for b in blocks]) if blocks[0].targets is not None else None,
            steps=np.concatenate([b.steps for b in blocks]),
        )


def _regressor_matrix(
    y: Optional[np.ndarray],
    x: np.ndarray,
    config: NarxConfig,
    steps: np.ndarray,
) -> np.ndarray:
    cols: List[np.ndarray] = [y[steps - k] for k in config.output_delays] if config.output_delays else []
    for c in range(config.input_channels):
        cols.extend(x[steps - k, c] for k in config.input_delays)
    return np.column_stack(cols)


def _check_inputs(series: SampleSeries, config: NarxConfig) -> np.ndarray:
    x = series.inputs()
    if x.shape[1] != config.input_channels:
        raise DimensionMismatch(f"series has {x.shape[1]} input channels, network expects {config.input_channels}")
    if len(series) <= config.max_lag:
        raise SeriesTooShort(f"series of length {len(series)} needs more than {config.max_lag} samples")
    return x


def build_open_loop_rows(series: SampleSeries, config: NarxConfig) -> RegressorRows:
    """
    Series-parallel rows: output-lag slots hold measured SOC and each row's
    target is the SOC at the row's own step.  Returns len(series) - max_lag rows.
    """
    if series.soc is None:
        raise MissingGroundTruth("open-loop rows need the soc channel")
    x = _check_inputs(series, config)
    steps = np.arange(config.max_lag, len(series))
    values = _regressor_matrix(series.soc, x, config, steps)
    return RegressorRows(config, values, series.soc[steps].copy(), steps)


# ── Evaluation ────────────────────────────────────────────────────────

def forward(net: NarxNetwork, row: Union[RegressorRow, np.ndarray, Sequence[float]]) -> float:
    """output_bias + output_weights . tanh(hidden_weights . row + hidden_bias)"""
    x = np.asarray(row.values if isinstance(row, RegressorRow) else row, dtype=float)
    if x.shape != (net.config.regressor_len,):
        raise DimensionMismatch(f"row has shape {x.shape}, expected ({net.config.regressor_len},)")
    hidden = np.tanh(net.hidden_weights @ x + net.hidden_bias)
    return float(net.output_bias + net.output_weights @ hidden)


def forward_batch(net: NarxNetwork, values: np.ndarray) -> np.ndarray:
    """Vectorized forward over an [m x regressor_len] matrix."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != net.config.regressor_len:
        raise DimensionMismatch(f"rows have shape {values.shape}, expected (m, {net.config.regressor_len})")
    return np.tanh(values @ net.hidden_weights.T + net.hidden_bias) @ net.output_weights + net.output_bias


def predict_open_loop(net: NarxNetwork, series: SampleSeries) -> np.ndarray:
    """
    One-step-ahead estimates from measured SOC feedback.  The first max_lag
    samples are copied from the measured SOC.
    """
    rows = build_open_loop_rows(series, net.config)
    out = series.soc.copy()
    for i in range(len(rows)):
        out[rows.steps[i]] = forward(net, rows.values[i])
    return out


def predict_free_run(net: NarxNetwork, rows: RegressorRows) -> np.ndarray:
    """
    Row-wise estimates where each output-lag slot is fed the network's own
    earlier estimate whenever the lagged step is itself one of ``rows``.
    Slots whose step lies outside ``rows`` keep the measured value, so every
    contiguous run of steps is a closed-loop run seeded from measured SOC.
    """
    delays = net.config.output_delays
    if not delays:
        return forward_batch(net, rows.values)
    values = np.array(rows.values, dtype=float)
    out = np.empty(len(values))
    position = {int(s): k for k, s in enumerate(rows.steps)}
    for k, step in enumerate(rows.steps):
        for j, d in enumerate(delays):
            prev = position.get(int(step) - d)
            if prev is not None and prev < k:
                values[k, j] = out[prev]
        out[k] = forward(net, values[k])
    return out


# ── Closed loop ───────────────────────────────────────────────────────

@dataclass
class ClosedLoopState:
    """
    Feedback bookkeeping for one closed-loop run.

    ``soc0`` is the bootstrap SOC as a fraction; ``feedback0`` is the same
    value expressed in the network's output space (normalized), which is what
    fills the output-lag slots while n < n0 and during the warm-up prefix.
    """

    soc0: float
    n0: int
    feedback0: float
    history_y: Deque[float]
    history_x: Deque[np.ndarray]

    @classmethod
    def start(
        cls,
        config: NarxConfig,
        soc0: float,
        n0: Optional[int] = None,
        feedback0: Optional[float] = None,
    ) -> "ClosedLoopState":
        if not (0.0 <= soc0 <= 1.0) or not np.isfinite(soc0):
            raise InvalidSoc0(f"soc0 must lie in [0, 1], got {soc0}")
        if n0 is None:
            n0 = config.max_lag + 1
        if n0 < 0:
            raise InvalidConfig("n0 must be non-negative")
        return cls(
            soc0=float(soc0),
            n0=int(n0),
            feedback0=float(soc0 if feedback0 is None else feedback0),
            history_y=deque(maxlen=max(config.output_delays, default=1)),
            history_x=deque(maxlen=max(config.input_delays)),
        )

    def feedback_lags(self, n: int, output_delays: Tuple[int, ...]) -> List[float]:
        if n < self.n0:
            return [self.feedback0] * len(output_delays)
        return [self.history_y[-k] for k in output_delays]

    def push(self, y: float, x: np.ndarray) -> None:
        self.history_y.append(y)
        self.history_x.append(x)


def iter_closed_loop(
    net: NarxNetwork,
    series: SampleSeries,
    init: ClosedLoopState,
) -> Iterator[Tuple[int, Optional[np.ndarray], float]]:
    """
    Step through a closed-loop run, yielding ``(n, row, output)``.  ``row`` is
    None for the warm-up prefix, whose output is ``init.feedback0``.
    """
    cfg = net.config
    x = _check_inputs(series, cfg)
    for n in range(len(series)):
        if n < cfg.max_lag:
            row = None
            y = init.feedback0
        else:
            lags = init.feedback_lags(n, cfg.output_delays)
            for c in range(cfg.input_channels):
                lags.extend(init.history_x[-k][c] for k in cfg.input_delays)
            row = np.array(lags, dtype=float)
            y = forward(net, row)
        init.push(y, x[n])
        yield n, row, y


def predict_closed_loop(net: NarxNetwork, series: SampleSeries, init: ClosedLoopState) -> np.ndarray:
    """
    Parallel-mode estimates: output lags are SOC0 for n < n0 and the network's
    own earlier outputs afterwards.  Values stay in network space; the
    pipeline denormalizes and clamps.
    """
    out = np.empty(len(series))
    for n, _, y in iter_closed_loop(net, series, init):
        out[n] = y
    return out
