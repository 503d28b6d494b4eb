"""Application configuration primitives."""

from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

BASE_DIR = Path(__file__).resolve().parent.parent  # backend/helmddm


class Settings(BaseSettings):
    """Centralized process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ===== BASICS =====
    project_name: str = Field(default="HelmDDM Schwarz Solver")
    api_version: str = Field(default="0.3.0")
    app_env: Literal["development", "production", "test"] = Field(default="development")
    debug: bool = Field(default=False)

    # ===== OUTPUT =====
    log_dir: str = Field(default="logs")
    output_dir: str = Field(default="runs")

    # ===== CAPS =====
    max_mesh_nodes: int = Field(default=200_000, gt=0)
    max_dense_dim: int = Field(default=2000, gt=0)

    # ===== LINEAR ALGEBRA =====
    local_solve_workers: int = Field(default=1, ge=1)
    lu_pivot_threshold: float = Field(default=0.1, ge=0.0, le=1.0)

    @property
    def is_production(self) -> bool:
        return self.app_env == "production" and not self.debug

    def output_path(self, *parts: str) -> Path:
        """Return a path under the output directory, creating parents."""
        path = Path(self.output_dir).joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


@lru_cache()
def get_settings() -> Settings:
    """Select env file based on APP_ENV and initialize Settings."""
    env = os.getenv("APP_ENV", "development").lower()

    if env == "production":
        env_file = ".env.prod"
    elif env == "test":
        env_file = ".env.test"
    else:
        env_file = ".env.dev"

    candidate = BASE_DIR / env_file
    if candidate.exists():
        return Settings(_env_file=str(candidate))

    return Settings()
