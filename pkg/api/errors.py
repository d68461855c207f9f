"""Map toolkit errors onto HTTP responses."""

from __future__ import annotations

from fastapi import HTTPException

from core.errors import ConfigError, DataError, SocError, UnknownPreset


def to_http(exc: SocError) -> HTTPException:
    if isinstance(exc, UnknownPreset):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, (ConfigError, DataError)):
        return HTTPException(status_code=422, detail=f"{type(exc).__name__}: {exc}")
    return HTTPException(status_code=500, detail=f"{type(exc).__name__}: {exc}")
