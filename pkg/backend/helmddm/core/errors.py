"""Exception hierarchy shared by the solver, the CLI and the HTTP facade."""

from __future__ import annotations

from typing import Iterable, Optional


class HelmDDMError(Exception):
    """Base class for every error raised on purpose by helmddm."""


class InvalidArgumentError(HelmDDMError, ValueError):
    """An argument violates a documented precondition."""


class ResourceLimitError(HelmDDMError):
    """A configured size cap (mesh nodes, dense dimension) would be exceeded."""

    def __init__(self, what: str, requested: int, limit: int) -> None:
        super().__init__(f"{what}: requested {requested}, limit is {limit}")
        self.what = what
        self.requested = requested
        self.limit = limit


class MeshParseError(HelmDDMError):
    """Malformed mesh or partition document."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")
        self.line = line


class PreconditionError(HelmDDMError):
    """An operation was called on data it is not defined for."""


class SingularFactorizationError(HelmDDMError):
    """A factorization hit a (numerically) zero pivot or a non-SPD matrix."""

    def __init__(self, message: str, subdomain: Optional[int] = None) -> None:
        prefix = f"subdomain {subdomain}: " if subdomain is not None else ""
        super().__init__(f"{prefix}{message}")
        self.subdomain = subdomain


class ConfigError(HelmDDMError):
    """Invalid run configuration; `fields` names the offending keys."""

    def __init__(self, message: str, fields: Iterable[str] = ()) -> None:
        self.fields = tuple(fields)
        names = f" [{', '.join(self.fields)}]" if self.fields else ""
        super().__init__(f"{message}{names}")


class ConvergenceError(HelmDDMError):
    """A member run of a study failed; wraps the cause with its context."""
