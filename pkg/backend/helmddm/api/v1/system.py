"""Service health and version endpoints."""

from fastapi import APIRouter, Depends

from ... import __version__
from ...core.config import Settings, get_settings

router = APIRouter(tags=["system"])


@router.get("/health", summary="Liveness check")
def health() -> dict:
    return {"status": "ok"}


@router.get("/version", summary="API and solver versions")
def version(settings: Settings = Depends(get_settings)) -> dict:
    return {"api_version": settings.api_version, "solver_version": __version__}
