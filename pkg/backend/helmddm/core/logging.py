"""Logging setup and request middleware for helmddm."""

from __future__ import annotations

import logging
from logging.config import dictConfig
from pathlib import Path
from time import perf_counter
from typing import Any

from fastapi import Request
from starlette.middleware.base import BaseHTTPMiddleware

from .config import Settings

# Per-iteration traces come from these loggers at DEBUG.
SOLVER_LOGGERS = ("helmddm.core.ddm", "helmddm.core.linsolve")
QUIET_PATHS = frozenset({"/api/v1/health"})


def _rotating(path: Path, level: str, backup_count: int, formatter: str = "default") -> dict[str, Any]:
    return {
        "class": "logging.handlers.TimedRotatingFileHandler",
        "formatter": formatter,
        "level": level,
        "filename": str(path),
        "when": "midnight",
        "backupCount": backup_count,
        "encoding": "utf-8",
    }


def build_logging_config(settings: Settings, *, verbose: bool = False) -> dict[str, Any]:
    """dictConfig document: console on stderr, app/errors files, and solver.log when verbose."""
    log_dir = Path(settings.log_dir)
    trace = settings.debug or verbose
    level = "DEBUG" if trace else "INFO"

    handlers: dict[str, Any] = {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "console",
            "level": level,
            "stream": "ext://sys.stderr",
        },
        "app_file": _rotating(log_dir / "app.log", "INFO", 14),
        "errors_file": _rotating(log_dir / "errors.log", "ERROR", 30),
    }
    package_handlers = ["console", "app_file", "errors_file"]
    loggers: dict[str, Any] = {
        "helmddm": {"level": level, "handlers": package_handlers, "propagate": False},
        "py.warnings": {"level": "WARNING", "handlers": ["console", "app_file"], "propagate": False},
        "uvicorn.error": {"level": level, "handlers": ["console", "errors_file"], "propagate": False},
        "uvicorn.access": {"level": "WARNING", "handlers": ["console"], "propagate": False},
    }
    if trace:
        handlers["solver_file"] = _rotating(log_dir / "solver.log", "DEBUG", 3, formatter="trace")
        for name in SOLVER_LOGGERS:
            loggers[name] = {"level": "DEBUG", "handlers": ["solver_file"], "propagate": True}

    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "default": {"format": "%(asctime)s | %(levelname)s | %(name)s | %(message)s"},
            "console": {"format": "%(levelname)-7s %(name)s: %(message)s"},
            "trace": {"format": "%(relativeCreated)10.1f ms | %(name)s | %(message)s"},
        },
        "handlers": handlers,
        "loggers": loggers,
        "root": {"level": "WARNING", "handlers": ["console"]},
    }


def setup_logging(settings: Settings, *, verbose: bool = False) -> None:
    """Configure the ``helmddm`` logger tree; safe to call more than once."""
    Path(settings.log_dir).mkdir(parents=True, exist_ok=True)
    dictConfig(build_logging_config(settings, verbose=verbose))
    # scipy reports e.g. SparseEfficiencyWarning through the warnings module
    logging.captureWarnings(True)


class RequestLoggingMiddleware(BaseHTTPMiddleware):
    """One log line per HTTP request; run endpoints also get an X-Elapsed-Ms header."""

    def __init__(self, app, logger_name: str = "helmddm.requests"):
        super().__init__(app)
        self.logger = logging.getLogger(logger_name)

    async def dispatch(self, request: Request, call_next):
        path = request.url.path
        start = perf_counter()
        try:
            response = await call_next(request)
        except Exception:
            self.logger.exception("%s %s failed after %.1f ms", request.method, path, (perf_counter() - start) * 1e3)
            raise
        elapsed = (perf_counter() - start) * 1e3
        response.headers["X-Elapsed-Ms"] = f"{elapsed:.1f}"
        log = self.logger.debug if path in QUIET_PATHS else self.logger.info
        log("%s %s -> %d in %.1f ms", request.method, path, response.status_code, elapsed)
        return response
