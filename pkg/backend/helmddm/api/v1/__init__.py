"""Versioned API package."""

__all__ = ["runs", "system"]
