"""Common SampleSeries schema — every dataset source normalizes into this."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from core.errors import InvalidSeries

_DT_RTOL = 1e-9


class Device(str, Enum):
    BATTERY = "battery"
    SUPERCAPACITOR = "supercapacitor"


class Phase(str, Enum):
    CC_CHARGE = "CC_charge"
    CV_CHARGE = "CV_charge"
    REST = "Rest"
    DISCHARGE = "Discharge"
    DRIVE = "Drive"


@dataclass
class SampleSeries:
    """
    Uniformly sampled current / voltage record of one device.

    Sign convention: positive current discharges the device.  ``soc`` is a
    fraction in [0, 1] when present.  A normalized series carries the same
    layout with every channel mapped to [-1, 1] by ``core.pipeline.normalize``.
    """

    # ── Channels ──────────────────────────────────────────────────────
    t: np.ndarray                       # seconds, constant step
    current: np.ndarray                 # amperes, + = discharge
    voltage: np.ndarray                 # volts (terminal)
    soc: Optional[np.ndarray] = None    # ground truth fraction, if known

    # ── Labels ────────────────────────────────────────────────────────
    device: Device = Device.BATTERY
    phase: Optional[np.ndarray] = None  # per-sample Phase values (simulator output)
    meta: Dict[str, Any] = field(default_factory=dict)
    traces: Dict[str, np.ndarray] = field(default_factory=dict)  # simulator internals
    normalized: bool = False

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        if self.soc is not None:
            self.soc = np.asarray(self.soc, dtype=float)
        if self.phase is not None:
            self.phase = np.asarray(self.phase, dtype=object)
        self.device = Device(self.device)

        n = len(self.t)
        if n < 2:
            raise InvalidSeries(f"series needs at least 2 samples, got {n}")
        for name in ("current", "voltage", "soc", "phase"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise InvalidSeries(f"channel {name!r} has {len(arr)} samples, expected {n}")

        steps = np.diff(self.t)
        dt = (self.t[-1] - self.t[0]) / (n - 1)
        if not np.all(np.isfinite(self.t)) or dt <= 0 or np.any(steps <= 0):
            raise InvalidSeries("timeline must be finite and strictly increasing")
        if np.max(np.abs(steps - dt)) > _DT_RTOL * dt:
            raise InvalidSeries("timeline is not uniformly sampled")

    # ── Properties ────────────────────────────────────────────────────

    @property
    def dt(self) -> float:
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def has_soc(self) -> bool:
        return self.soc is not None

    def __len__(self) -> int:
        return len(self.t)

    # ── Helpers ───────────────────────────────────────────────────────

    def check_values(self) -> None:
        """Raise InvalidSeries unless every channel is finite and voltage is positive."""
        for name in ("current", "voltage", "soc"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise InvalidSeries(f"channel {name!r} contains non-finite values")
        if not self.normalized:
            if np.any(self.voltage <= 0):
                raise InvalidSeries("voltage must be positive")
            if self.soc is not None and (self.soc.min() < 0 or self.soc.max() > 1):
                raise InvalidSeries("soc must lie in [0, 1]")

    def inputs(self) -> np.ndarray:
        """Exogenous channels as an (n, 2) array: current, voltage."""
        return np.column_stack([self.current, self.voltage])

    def with_soc(self, soc: Optional[np.ndarray]) -> "SampleSeries":
        return replace(self, soc=None if soc is None else np.asarray(soc, dtype=float))

    def without_soc(self) -> "SampleSeries":
        return replace(self, soc=None)

    def slice(self, start: int, stop: int) -> "SampleSeries":
        """Sub-series over sample indices [start, stop)."""
        return replace(
            self,
            t=self.t[start:stop],
            current=self.current[start:stop],
            voltage=self.voltage[start:stop],
            soc=None if self.soc is None else self.soc[start:stop],
            phase=None if self.phase is None else self.phase[start:stop],
            traces={k: v[start:stop] for k, v in self.traces.items()},
            meta=dict(self.meta),
        )

    def to_frame(self) -> pd.DataFrame:
        cols: Dict[str, Any] = {"t": self.t, "current": self.current, "voltage": self.voltage}
        if self.soc is not None:
            cols["soc"] = self.soc
        return pd.DataFrame(cols)

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        device: Device = Device.BATTERY,
        meta: Optional[Dict[str, Any]] = None,
    ) -> "SampleSeries":
        missing = [c for c in ("t", "current", "voltage") if c not in df.columns]
        if missing:
            raise InvalidSeries(f"missing columns: {', '.join(missing)}")
        return cls(
            t=df["t"].to_numpy(dtype=float),
            current=df["current"].to_numpy(dtype=float),
            voltage=df["voltage"].to_numpy(dtype=float),
            soc=df["soc"].to_numpy(dtype=float) if "soc" in df.columns else None,
            device=device,
            meta=dict(meta or {}),
        )
