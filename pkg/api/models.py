"""Pydantic models for API request/response schemas."""

from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    presets: int
    bundles_cached: int


class PresetSummary(BaseModel):
    name: str
    description: str = ""
    default_profile: str
    devices: Dict[str, str]          # device name -> kind


class SimulateRequest(BaseModel):
    """Body for POST /simulate."""
    preset: str = Field(..., description="Preset name")
    profile: Optional[Literal["cccv", "udds"]] = Field(None, description="Current profile (default: the preset's)")
    seed: int = Field(42, description="Noise / drive-cycle seed")
    dt: Optional[float] = Field(None, gt=0, description="Sample period (s)")
    noiseless: bool = False


class SeriesPayload(BaseModel):
    """One device record in the SampleSeries layout (current + = discharge)."""
    name: str = ""
    device: Literal["battery", "supercapacitor"] = "battery"
    t: List[float]
    current: List[float]
    voltage: List[float]
    soc: Optional[List[float]] = None
    phase: Optional[List[str]] = None


class SimulateResponse(BaseModel):
    preset: str
    profile: str
    seed: int
    series: List[SeriesPayload]


class EstimateRequest(BaseModel):
    """Body for POST /estimate."""
    bundle: str = Field(..., description="Bundle file name inside BUNDLE_DIR")
    series: SeriesPayload
    soc0: Optional[List[float]] = Field(None, description="Initial SOC; one value per segment selects the Provided policy")


class SegmentResponse(BaseModel):
    regime: str
    start: int
    stop: int


class EstimateResponse(BaseModel):
    bundle_checksum: str
    model: str
    device: str
    soc_est: List[float]
    segments: List[SegmentResponse]
    metrics: Optional[Dict[str, Any]] = None
