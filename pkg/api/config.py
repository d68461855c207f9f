"""Application configuration loaded from environment variables (and an optional .env file)."""

from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

_ROOT = Path(__file__).resolve().parent.parent

# Server
HOST = os.getenv("HOST", "0.0.0.0")
PORT = int(os.getenv("PORT", "8000"))

# Storage
BUNDLE_DIR = Path(os.getenv("BUNDLE_DIR", str(_ROOT / "bundles")))
PRESET_DIR = Path(os.getenv("PRESET_DIR", str(_ROOT / "presets")))

# Simulation requests above this many samples are refused
MAX_SIM_SAMPLES = int(os.getenv("MAX_SIM_SAMPLES", "50000"))
