"""Simulator adapter — turns a preset into labelled SampleSeries, one per device."""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional, Union

from core.presets import Preset, load_preset
from core.series import Device, SampleSeries
from core.simulator import simulate_battery, simulate_sc
from sources.base import DatasetSource

log = logging.getLogger("simulate")


class SimulatedSource(DatasetSource):
    """
    Runs every device of a preset through the ECM simulator.

    One seed drives the sensor noise and the drive-cycle generator, so the
    same (preset, profile, seed, dt) always yields the same samples.
    """

    name = "simulator"

    def __init__(
        self,
        preset: Union[str, Preset],
        profile: Optional[str] = None,
        seed: int = 42,
        dt: Optional[float] = None,
        noiseless: bool = False,
    ) -> None:
        self.preset = load_preset(preset) if isinstance(preset, str) else preset
        self.profile = profile or self.preset.default_profile
        self.seed = seed
        self.dt = dt
        self.noiseless = noiseless

    def load(self) -> List[SampleSeries]:
        out: List[SampleSeries] = []
        for k, (dev_name, block) in enumerate(self.preset.devices.items()):
            # same drive-cycle shape for every device, independent sensor noise
            noise = self.preset.noise.spec(self.seed + k, self.noiseless)
            params = block.device_params()
            profile = block.profile(self.profile, dt=self.dt, seed=self.seed)
            sim = simulate_battery if block.kind == Device.BATTERY else simulate_sc
            series = sim(params, profile, block.soc_init(self.profile), noise)
            series.meta.update({
                "name": dev_name,
                "preset": self.preset.name,
                "profile": self.profile,
                "seed": self.seed,
            })
            log.info("%s/%s: %d samples at dt=%g s", self.preset.name, dev_name, len(series), series.dt)
            out.append(series)
        return out

    def manifest(self) -> Dict[str, Any]:
        """Everything needed to regenerate the datasets."""
        return {
            "preset": self.preset.name,
            "profile": self.profile,
            "seed": self.seed,
            "dt": self.dt,
            "noiseless": self.noiseless,
            "noise": self.preset.noise.model_dump(),
            "devices": {
                name: {
                    "kind": block.kind.value,
                    "params": block.device_params().to_dict(),
                    "soc_init": block.soc_init(self.profile),
                }
                for name, block in self.preset.devices.items()
            },
        }
