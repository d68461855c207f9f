"""
/presets and /simulate routes — shipped device presets and on-demand datasets.
"""

from __future__ import annotations

from typing import List

from fastapi import APIRouter, HTTPException

from api.config import MAX_SIM_SAMPLES, PRESET_DIR
from api.errors import to_http
from api.models import PresetSummary, SeriesPayload, SimulateRequest, SimulateResponse
from core.errors import SocError
from core.presets import Preset, list_presets, load_preset
from core.series import SampleSeries
from sources.simulated import SimulatedSource

router = APIRouter(tags=["presets"])


def _summary(preset: Preset) -> PresetSummary:
    return PresetSummary(
        name=preset.name,
        description=preset.description,
        default_profile=preset.default_profile,
        devices={name: block.kind.value for name, block in preset.devices.items()},
    )


def series_payload(series: SampleSeries) -> SeriesPayload:
    return SeriesPayload(
        name=str(series.meta.get("name", "")),
        device=series.device.value,
        t=series.t.tolist(),
        current=series.current.tolist(),
        voltage=series.voltage.tolist(),
        soc=None if series.soc is None else series.soc.tolist(),
        phase=None if series.phase is None else [p.value for p in series.phase],
    )


@router.get("/presets", response_model=List[PresetSummary])
def presets():
    try:
        return [_summary(load_preset(name, PRESET_DIR)) for name in list_presets(PRESET_DIR)]
    except SocError as exc:
        raise to_http(exc)


@router.get("/presets/{name}")
def preset_detail(name: str):
    """Full preset document as stored on disk (after validation)."""
    try:
        return load_preset(name, PRESET_DIR).model_dump(mode="json")
    except SocError as exc:
        raise to_http(exc)


@router.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest):
    try:
        source = SimulatedSource(load_preset(req.preset, PRESET_DIR), req.profile, req.seed, req.dt, req.noiseless)
        datasets = source.load()
    except SocError as exc:
        raise to_http(exc)

    total = sum(len(s) for s in datasets)
    if total > MAX_SIM_SAMPLES:
        raise HTTPException(status_code=413, detail=f"{total} samples exceed the limit of {MAX_SIM_SAMPLES}; use the CLI")
    return SimulateResponse(
        preset=source.preset.name,
        profile=source.profile,
        seed=req.seed,
        series=[series_payload(s) for s in datasets],
    )
