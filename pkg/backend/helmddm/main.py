"""Application factory for the helmddm HTTP facade."""

import logging

from fastapi import FastAPI

from .api import api_router
from .core.config import get_settings
from .core.error_handlers import register_exception_handlers
from .core.logging import RequestLoggingMiddleware, setup_logging

LOGGER = logging.getLogger("helmddm.app")


def create_app() -> FastAPI:
    """Instantiate the FastAPI app with routes and middleware."""
    settings = get_settings()
    setup_logging(settings)

    app = FastAPI(
        title=settings.project_name,
        version=settings.api_version,
        description="Helmholtz finite-element solver with an optimized Schwarz domain decomposition engine.",
        debug=settings.debug,
    )
    app.state.settings = settings

    # --- Request logging (outermost) ---
    app.add_middleware(RequestLoggingMiddleware)

    # --- Routes ---
    app.include_router(api_router, prefix="/api/v1")

    register_exception_handlers(app, debug=settings.debug)
    LOGGER.info("helmddm API ready (env=%s)", settings.app_env)
    return app


app = create_app()
