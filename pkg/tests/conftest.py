"""Shared fixtures.  The repository root goes on sys.path like the API entry points do."""

from __future__ import annotations

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.pipeline import CoulombConfig, coulomb_count  # noqa: E402
from core.series import Device, SampleSeries  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def block_current(levels, width):
    """Piecewise-constant current: each level held for ``width`` samples."""
    return np.repeat(np.asarray(levels, dtype=float), width)


def synthetic_series(current, device=Device.BATTERY, capacity_c=200.0, soc_init=0.5, dt=1.0):
    """
    Coulomb-counted SOC plus a simple voltage map, enough structure for the
    networks to learn something in a handful of epochs.
    """
    current = np.asarray(current, dtype=float)
    n = len(current)
    raw = SampleSeries(
        t=np.arange(n) * dt,
        current=current,
        voltage=np.full(n, 3.0),
        device=device,
    )
    soc = coulomb_count(raw, CoulombConfig(capacity_c, soc_init)).soc
    if device == Device.BATTERY:
        voltage = 3.3 + 0.8 * soc - 0.02 * current
    else:
        voltage = 2.7 * soc - 0.05 * current
    return SampleSeries(
        t=raw.t,
        current=current,
        voltage=voltage,
        soc=soc,
        device=device,
        meta={"nominal_capacity_c": capacity_c, "soc_init": soc_init},
    )


@pytest.fixture
def battery_series():
    return synthetic_series(block_current([1.0, -1.0, 0.8, -0.6, 1.2, -1.0], 40))


@pytest.fixture
def sc_series():
    return synthetic_series(
        block_current([0.5, -0.5, 0.3, -0.4, 0.5, -0.2], 30),
        device=Device.SUPERCAPACITOR,
        capacity_c=100.0,
    )
