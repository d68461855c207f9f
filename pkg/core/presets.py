"""
Preset profiles — shipped JSON files under ``presets/`` describing the
devices, current profiles, sensor noise and training overrides of one
experiment.  Validated with pydantic, then turned into the engine dataclasses.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError

from core.errors import InvalidSpec, UnknownPreset
from core.narx import NarxConfig
from core.series import Device
from core.simulator import (
    PRESET_DIR,
    CccvSpec,
    CurrentProfile,
    EcmBatteryParams,
    NoiseSpec,
    ScParams,
    UddsSpec,
    profile_cccv,
    profile_udds_like,
)
from core.trainer import TrainConfig

log = logging.getLogger("presets")

ProfileKind = Literal["cccv", "udds"]


class TemperatureShift(BaseModel):
    """Elevated-temperature preset: simulator parameter shift, not measured data."""
    capacity_scale: float = Field(0.95, gt=0)
    resistance_scale: float = Field(1.30, gt=0)
    tag: str = "45C"


class ProfileBlock(BaseModel):
    soc_init: float = Field(..., ge=0, le=1)
    spec: Dict[str, Any] = Field(default_factory=dict)


class DeviceBlock(BaseModel):
    kind: Device
    params: Dict[str, Any] = Field(default_factory=dict)
    temperature: Optional[TemperatureShift] = None
    cccv: Optional[ProfileBlock] = None
    udds: Optional[ProfileBlock] = None

    def device_params(self) -> Any:
        cls = EcmBatteryParams if self.kind == Device.BATTERY else ScParams
        params = cls.from_dict(self.params)
        if self.temperature is not None:
            t = self.temperature
            params = params.shifted(t.capacity_scale, t.resistance_scale, t.tag)
        return params

    def profile(self, kind: str, dt: Optional[float] = None, seed: int = 0) -> CurrentProfile:
        block = self.cccv if kind == "cccv" else self.udds
        if block is None:
            raise InvalidSpec(f"{self.kind.value} has no {kind!r} profile in this preset")
        spec = dict(block.spec)
        if dt is not None:
            spec["dt"] = dt
        if kind == "cccv":
            return profile_cccv(CccvSpec.from_dict(spec))
        udds = UddsSpec.from_dict(spec)
        return profile_udds_like(seed, udds.duration_s, udds.peak_current, udds.dt)

    def soc_init(self, kind: str) -> float:
        block = self.cccv if kind == "cccv" else self.udds
        if block is None:
            raise InvalidSpec(f"{self.kind.value} has no {kind!r} profile in this preset")
        return block.soc_init


class NoiseBlock(BaseModel):
    sigma_v: float = Field(0.0, ge=0)
    sigma_i: float = Field(0.0, ge=0)

    def spec(self, seed: int, noiseless: bool = False) -> NoiseSpec:
        if noiseless:
            return NoiseSpec(0.0, 0.0, seed)
        return NoiseSpec(self.sigma_v, self.sigma_i, seed)


class Preset(BaseModel):
    name: str
    description: str = ""
    default_profile: ProfileKind = "cccv"
    devices: Dict[str, DeviceBlock]
    noise: NoiseBlock = Field(default_factory=NoiseBlock)
    narx: Dict[str, Any] = Field(default_factory=dict)
    train: Dict[str, Any] = Field(default_factory=dict)

    def narx_config(self, overrides: Optional[Dict[str, Any]] = None) -> NarxConfig:
        return NarxConfig.from_dict({**self.narx, **(overrides or {})})

    def train_config(self, seed: int, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, **(overrides or {}), "seed": seed})


class ExperimentSpec(BaseModel):
    """One reproducible experiment: preset + profile + overrides + seed."""
    name: Optional[str] = None
    preset: Optional[str] = None
    profile: Optional[ProfileKind] = None
    model: Literal["narx", "ann"] = "narx"
    seed: int = 42
    dt: Optional[float] = Field(None, gt=0)
    noiseless: bool = False
    narx: Dict[str, Any] = Field(default_factory=dict)
    train: Dict[str, Any] = Field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.name or f"{self.preset or 'dataset'}_{self.profile or 'default'}"


# ── Loading ───────────────────────────────────────────────────────────

def _preset_dirs(extra: Optional[Path] = None) -> List[Path]:
    dirs = [PRESET_DIR]
    if extra is not None:
        dirs.insert(0, Path(extra))
    return dirs


def list_presets(extra_dir: Optional[Path] = None) -> List[str]:
    names = set()
    for d in _preset_dirs(extra_dir):
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.json"))
    return sorted(names)


def load_preset(name: str, extra_dir: Optional[Path] = None) -> Preset:
    """Load a preset by name (user directory first, then the shipped presets)."""
    for d in _preset_dirs(extra_dir):
        path = d / f"{name}.json"
        if path.is_file():
            try:
                return Preset.model_validate(json.loads(path.read_text(encoding="utf-8")))
            except (ValidationError, json.JSONDecodeError) as exc:
                raise InvalidSpec(f"preset {name!r} is invalid: {exc}") from exc
    raise UnknownPreset(f"unknown preset {name!r} (available: {', '.join(list_presets(extra_dir))})")


def load_experiment(path: Path) -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (ValidationError, json.JSONDecodeError) as exc:
        raise InvalidSpec(f"experiment file {path} is invalid: {exc}") from exc
