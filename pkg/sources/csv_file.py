"""
CSV dataset adapter — the one file format every other part reads and writes.

Layout::

    # device=battery            <- "# key=value" metadata lines (optional)
    # nominal_capacity_c=25488.0
    t,current,voltage,soc,#phase
    0,7.08,3.412,0.05,#CC_charge

``soc`` and the comment-encoded ``#phase`` column are optional.  Current is
in amperes with positive values discharging the device; SOC is a fraction.
"""

from __future__ import annotations

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from core.errors import InvalidSeries
from core.pipeline import prepare_series
from core.series import Device, Phase, SampleSeries
from sources.base import DatasetSource

log = logging.getLogger("csv")

PHASE_COLUMN = "#phase"
FLOAT_FORMAT = "%.15g"


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _format_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True)


def read_series_csv(path: Path, device: Optional[Device] = None) -> SampleSeries:
    """Parse one device CSV.  ``device`` overrides the ``# device=`` metadata line."""
    meta: Dict[str, Any] = {}
    body: List[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = _parse_value(value.strip())
        elif line.strip():
            body.append(line)
    if not body:
        raise InvalidSeries(f"{path}: no header / data rows")

    df = pd.read_csv(io.StringIO("\n".join(body)))
    df.columns = [str(c).strip() for c in df.columns]
    device = Device(device or meta.get("device", Device.BATTERY.value))
    try:
        series = SampleSeries.from_frame(df, device=device, meta=meta)
    except (ValueError, TypeError) as exc:
        raise InvalidSeries(f"{path}: non-numeric channel values ({exc})") from exc

    if PHASE_COLUMN in df.columns:
        try:
            series.phase = np.array([Phase(str(p).lstrip("#")) for p in df[PHASE_COLUMN]], dtype=object)
        except ValueError as exc:
            raise InvalidSeries(f"{path}: unknown phase label ({exc})") from exc

    log.info("read %s: %d samples, device=%s, soc=%s", path, len(series), device.value, series.has_soc)
    return series


def series_to_csv(series: SampleSeries, meta: Optional[Dict[str, Any]] = None) -> str:
    """Render a series in the layout above; metadata keys are written sorted."""
    header = {"device": series.device.value, **series.meta, **(meta or {})}
    lines = [f"# {k}={_format_value(v)}" for k, v in sorted(header.items())]

    df = series.to_frame()
    if series.phase is not None:
        df[PHASE_COLUMN] = ["#" + Phase(p).value for p in series.phase]
    body = df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return "\n".join(lines + [body]) if lines else body


class CsvSource(DatasetSource):
    """
    Reads one CSV per device.  When a file lacks the soc column and a
    capacity is given, ground truth is derived by coulomb counting.
    """

    name = "csv"

    def __init__(
        self,
        paths: List[Path],
        device: Optional[Device] = None,
        capacity_c: Optional[float] = None,
        soc_init: float = 1.0,
    ) -> None:
        self.paths = [Path(p) for p in paths]
        self.device = device
        self.capacity_c = capacity_c
        self.soc_init = soc_init

    def load(self) -> List[SampleSeries]:
        out = []
        for path in self.paths:
            series = read_series_csv(path, self.device)
            if not series.has_soc and self.capacity_c:
                series = prepare_series(series, self.capacity_c, self.soc_init)
            out.append(series)
        return out
