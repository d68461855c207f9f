"""
FastAPI application — hybrid-pack SOC estimation API.

Serves the shipped device presets, simulates datasets on demand, and runs
closed-loop SOC estimation with bundles trained by ``soc_cli.py train``.
"""

from __future__ import annotations

import logging
import os
import sys

# Ensure project root is importable
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.config import HOST, PORT, PRESET_DIR
from api.models import HealthResponse
from api.routers import estimate, presets
from core.presets import list_presets

logging.basicConfig(level=logging.INFO, format="[%(name)s] %(message)s")

# ── FastAPI app ───────────────────────────────────────────────────────

app = FastAPI(
    title="HESS SOC Estimation API",
    description=(
        "NARX-network state-of-charge estimation for hybrid battery / "
        "supercapacitor packs. Simulates preset datasets and estimates SOC "
        "with trained estimator bundles."
    ),
    version="0.1.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(presets.router)
app.include_router(estimate.router)


@app.get("/", tags=["health"])
def root():
    return {"message": "HESS SOC Estimation API", "docs": "/docs"}


@app.get("/health", response_model=HealthResponse, tags=["health"])
def health():
    return HealthResponse(
        status="ok",
        presets=len(list_presets(PRESET_DIR)),
        bundles_cached=estimate.cached_bundles(),
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("api.main:app", host=HOST, port=PORT, reload=True)
