"""
/estimate route — closed-loop SOC estimation with a stored bundle.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import replace
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from fastapi import APIRouter, HTTPException

from api.config import BUNDLE_DIR
from api.errors import to_http
from api.models import EstimateRequest, EstimateResponse, SegmentResponse, SeriesPayload
from core.errors import SocError
from core.pipeline import EstimatorBundle, Soc0Policy, estimate_soc_detailed, metrics_report
from core.series import Device, Phase, SampleSeries

log = logging.getLogger("api")

router = APIRouter(tags=["estimate"])

# name -> (mtime, bundle)
_bundle_cache: Dict[str, Tuple[float, EstimatorBundle]] = {}
_cache_lock = threading.Lock()


def cached_bundles() -> int:
    return len(_bundle_cache)


def _load_bundle(name: str) -> EstimatorBundle:
    if Path(name).name != name:
        raise HTTPException(status_code=422, detail="bundle must be a file name inside the bundle directory")
    path = BUNDLE_DIR / name
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"bundle {name!r} not found")
    mtime = path.stat().st_mtime
    with _cache_lock:
        hit = _bundle_cache.get(name)
        if hit and hit[0] == mtime:
            return hit[1]
        bundle = EstimatorBundle.from_dict(json.loads(path.read_text(encoding="utf-8")))
        _bundle_cache[name] = (mtime, bundle)
    log.info("loaded bundle %s (%s, %s)", name, bundle.device.value, bundle.model)
    return bundle


def _to_series(payload: SeriesPayload) -> SampleSeries:
    return SampleSeries(
        t=np.array(payload.t),
        current=np.array(payload.current),
        voltage=np.array(payload.voltage),
        soc=None if payload.soc is None else np.array(payload.soc),
        device=Device(payload.device),
        phase=None if payload.phase is None else np.array([Phase(p) for p in payload.phase], dtype=object),
        meta={"name": payload.name},
    )


@router.post("/estimate", response_model=EstimateResponse)
def estimate(req: EstimateRequest):
    """
    Run the bundle's network(s) in closed loop over the posted series.

    Metrics are included when the series carries ground-truth SOC.
    """
    try:
        bundle = _load_bundle(req.bundle)
        series = _to_series(req.series)
        if req.soc0:
            soc0 = list(req.soc0)
        elif series.has_soc:
            soc0 = [float(series.soc[0])]
        else:
            raise HTTPException(status_code=422, detail="soc0 is required when the series has no soc")
        if len(soc0) > 1:
            bundle = replace(bundle, soc0_policy=Soc0Policy.PROVIDED)
        soc_est, segments = estimate_soc_detailed(bundle, series, soc0)
        metrics = None
        if series.has_soc:
            metrics = metrics_report(series.soc, soc_est, segments, exclude_warmup=bundle.config.max_lag)
    except SocError as exc:
        raise to_http(exc)

    return EstimateResponse(
        bundle_checksum=bundle.checksum(),
        model=bundle.model,
        device=bundle.device.value,
        soc_est=soc_est.tolist(),
        segments=[SegmentResponse(**s.to_dict()) for s in segments],
        metrics=metrics,
    )
