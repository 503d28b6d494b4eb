from fastapi import APIRouter

from .v1 import runs, system

api_router = APIRouter()

api_router.include_router(system.router)
api_router.include_router(runs.router)
