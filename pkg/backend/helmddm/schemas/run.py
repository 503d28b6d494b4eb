"""Run configuration and report schemas."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, model_validator

from ..core.errors import ConfigError

ImpedanceKind = Literal["M", "K", "W", "Lambda"]
SolverKind = Literal["richardson", "gmres"]
PartitionMethodName = Literal["graph-growing", "coordinate-bisection", "onion", "from-file"]
ErrorEvery = Literal["iteration", "restart"]
SweepAxis = Literal["N_lambda", "kappa", "J", "mu_r"]

ALL_IMPEDANCES: tuple[ImpedanceKind, ...] = ("M", "K", "W", "Lambda")


def _field_names(exc: ValidationError) -> list[str]:
    names = []
    for error in exc.errors():
        loc = ".".join(str(part) for part in error.get("loc", ()) if part != "__root__")
        names.append(loc or "config")
    return names


class ImpedanceSpec(BaseModel):
    """Impedance operator and its parameters (M: kappa_r; K: a, b; W: a, delta; Lambda: none)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ImpedanceKind
    kappa_r: Optional[float] = Field(default=None, gt=0)
    a: Optional[float] = Field(default=None, gt=0)
    b: Optional[float] = Field(default=None, gt=0)
    delta: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_parameters(self) -> "ImpedanceSpec":
        required = {"M": ("kappa_r",), "K": ("a", "b"), "W": ("a", "delta"), "Lambda": ()}[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"impedance {self.kind} needs {', '.join(missing)}")
        return self

    @classmethod
    def for_wavenumber(cls, kind: ImpedanceKind, kappa: float, **overrides: Optional[float]) -> "ImpedanceSpec":
        """Defaults tied to the wave number: M kappa_r=k; K a=1/(2k), b=k; W a=k^2, delta=1/k."""
        if kappa <= 0:
            raise ConfigError("impedance defaults need a positive wave number", fields=("kappa",))
        defaults: dict[str, float] = {
            "M": {"kappa_r": kappa},
            "K": {"a": 1.0 / (2.0 * kappa), "b": kappa},
            "W": {"a": kappa**2, "delta": 1.0 / kappa},
            "Lambda": {},
        }[kind]
        allowed = {"M": {"kappa_r"}, "K": {"a", "b"}, "W": {"a", "delta"}, "Lambda": set()}[kind]
        defaults.update({k: v for k, v in overrides.items() if v is not None and k in allowed})
        try:
            return cls(kind=kind, **defaults)
        except ValidationError as exc:
            raise ConfigError(f"invalid impedance parameters for {kind}", fields=_field_names(exc)) from exc

class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: SolverKind = "gmres"
    r: float = Field(default=0.5, gt=0, lt=1, description="Richardson relaxation")
    tol: float = Field(default=1e-8, gt=0, description="Relative broken-H1 error tolerance")
    max_iter: int = Field(default=100_000, ge=1)
    restart: int = Field(default=20, ge=1)
    error_every: ErrorEvery = "iteration"


class RunConfig(BaseModel):
    """One experiment: geometry, medium, discretization, partition, impedance and solver."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    radius: float = Field(default=1.0, gt=0, description="Disk radius")
    kappa: float = Field(default=5.0, gt=0, description="Wave number (real part)")
    kappa_imag: float = Field(default=0.0, ge=0, description="Absorption, Im kappa")
    mu_r: float = Field(default=0.0, ge=0, description="Contrast: mu = 1 + mu_r in the inclusion")
    inclusion_radius: float = Field(default=0.5, gt=0)
    region_mu: Optional[dict[int, PositiveFloat]] = Field(
        default=None, description="mu per element region tag of the mesh (MSH physical tag)"
    )
    n_lambda: float = Field(default=20.0, gt=0, description="Points per wavelength 2 pi / (kappa h)")
    num_subdomains: int = Field(default=4, ge=1)
    partition: PartitionMethodName = "graph-growing"
    partition_file: Optional[Path] = None
    mesh_file: Optional[Path] = None
    impedance: ImpedanceKind = "M"
    kappa_r: Optional[float] = Field(default=None, gt=0)
    a: Optional[float] = Field(default=None, gt=0)
    b: Optional[float] = Field(default=None, gt=0)
    delta: Optional[float] = Field(default=None, gt=0)
    solver: SolverKind = "gmres"
    r: float = Field(default=0.5, gt=0, lt=1)
    tol: float = Field(default=1e-8, gt=0)
    restart: int = Field(default=20, ge=1)
    max_iter: int = Field(default=100_000, ge=1)
    error_every: ErrorEvery = "iteration"
    seed: int = 0
    reference_file: Optional[Path] = None

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.partition == "from-file" and self.partition_file is None:
            raise ValueError("partition 'from-file' requires partition_file")
        if self.region_mu is not None and self.mu_r > 0:
            raise ValueError("region_mu and mu_r are mutually exclusive")
        if self.mesh_file is None and self.target_h >= self.radius:
            raise ValueError("n_lambda too small: mesh size must stay below the radius")
        return self

    @property
    def target_h(self) -> float:
        return 2.0 * math.pi / (self.kappa * self.n_lambda)

    @property
    def complex_kappa(self) -> complex:
        return complex(self.kappa, self.kappa_imag)

    def impedance_spec(self, kind: Optional[ImpedanceKind] = None) -> ImpedanceSpec:
        return ImpedanceSpec.for_wavenumber(
            kind or self.impedance,
            self.kappa,
            kappa_r=self.kappa_r,
            a=self.a,
            b=self.b,
            delta=self.delta,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            method=self.solver,
            r=self.r,
            tol=self.tol,
            max_iter=self.max_iter,
            restart=self.restart,
            error_every=self.error_every,
        )

    def with_updates(self, **changes: Any) -> "RunConfig":
        return RunConfig.from_mapping({**self.model_dump(), **changes})

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(dict(data))
        except ValidationError as exc:
            raise ConfigError("invalid run configuration", fields=_field_names(exc)) from exc


class HistoryRecord(BaseModel):
    iteration: int
    relative_error: Optional[float] = None
    th_residual: float


class SolveReport(BaseModel):
    impedance: ImpedanceKind
    solver: SolverKind
    status: str
    converged: bool
    iterations: int
    final_error: Optional[float] = None
    num_nodes: int
    num_triangles: int
    num_subdomains: int
    n_sigma: int
    interior_cross_points: int
    boundary_cross_points: int
    history: list[HistoryRecord] = Field(default_factory=list)
    history_csv: Optional[str] = Field(default=None, description="Path of the written history CSV")


class DiagnosticsRequest(BaseModel):
    config: RunConfig
    impedances: list[ImpedanceKind] = Field(default_factory=lambda: list(ALL_IMPEDANCES), min_length=1)


class DiagnosticsRow(BaseModel):
    impedance: ImpedanceKind
    gamma: float
    lambda_minus: float
    lambda_plus: float
    rate_bound: float


class DiagnosticsReport(BaseModel):
    rows: list[DiagnosticsRow]
    csv: Optional[str] = None


class DirectReport(BaseModel):
    num_dofs: int
    residual: float
    gmres_iterations: Optional[int] = None
    gmres_status: Optional[str] = None
    reference_file: Optional[str] = None


class SweepRow(BaseModel):
    axis: SweepAxis
    value: float
    impedance: ImpedanceKind
    iterations: int
    converged: bool
    final_error: Optional[float] = None
    no_ddm_iterations: Optional[int] = None
