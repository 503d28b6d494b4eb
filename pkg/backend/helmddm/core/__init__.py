"""Numerical engines plus configuration, logging and error infrastructure."""

from .config import Settings, get_settings

__all__ = ["Settings", "get_settings"]
