"""Pydantic models shared by the CLI, the services and the HTTP routers."""

from .run import (
    ALL_IMPEDANCES,
    DiagnosticsReport,
    DiagnosticsRequest,
    DiagnosticsRow,
    DirectReport,
    HistoryRecord,
    ImpedanceKind,
    ImpedanceSpec,
    RunConfig,
    SolveReport,
    SolverConfig,
    SweepAxis,
    SweepRow,
)

__all__ = [
    "ALL_IMPEDANCES",
    "DiagnosticsReport",
    "DiagnosticsRequest",
    "DiagnosticsRow",
    "DirectReport",
    "HistoryRecord",
    "ImpedanceKind",
    "ImpedanceSpec",
    "RunConfig",
    "SolveReport",
    "SolverConfig",
    "SweepAxis",
    "SweepRow",
]
