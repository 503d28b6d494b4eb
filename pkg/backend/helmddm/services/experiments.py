"""Experiment orchestration: single solves, parameter sweeps, direct references, diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from ..core.config import Settings, get_settings
from ..core.ddm import (
    DDMState,
    estimate_gamma,
    gmres_solve,
    richardson_rate_bound,
    richardson_solve,
    skeleton_operator,
    skeleton_rhs,
)
from ..core.errors import ConvergenceError, HelmDDMError, InvalidArgumentError
from ..core.impedance import build_impedances, compute_lambda_bounds
from ..core.linsolve import gmres
from ..schemas.run import (
    ALL_IMPEDANCES,
    DiagnosticsReport,
    DiagnosticsRow,
    DirectReport,
    HistoryRecord,
    ImpedanceKind,
    RunConfig,
    SolveReport,
    SweepAxis,
    SweepRow,
)
from .problem import Problem, SchwarzSetup, build_problem, build_schwarz, reference_solution, write_reference_file

LOGGER = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"
HISTORY_COLUMNS = ["iteration", "relative_error", "th_residual"]
SWEEP_COLUMNS = ["axis", "value", "impedance", "iterations", "converged", "final_error", "no_ddm_iterations"]
DIAGNOSTICS_COLUMNS = ["impedance", "gamma", "lambda_minus", "lambda_plus", "rate_bound"]
# Sweeps over kappa keep h^2 kappa^3 = (2 pi / 20)^2, i.e. N_lambda = 20 sqrt(kappa).
KAPPA_SWEEP_RESOLUTION = 20.0


def write_csv(frame: pd.DataFrame, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def history_frame(state: DDMState) -> pd.DataFrame:
    return pd.DataFrame(
        [(entry.iteration, entry.relative_error, entry.th_residual) for entry in state.history],
        columns=HISTORY_COLUMNS,
    )


@dataclass
class SolveOutcome:
    report: SolveReport
    state: DDMState
    reference: np.ndarray


def solve_with(
    problem: Problem,
    setup: SchwarzSetup,
    reference: Optional[np.ndarray],
) -> DDMState:
    config = problem.config
    solver = config.solver_config()
    loads = setup.robin.loads
    if solver.method == "richardson":
        return richardson_solve(setup.robin, setup.exchange, loads, solver, reference)
    rhs = skeleton_rhs(setup.robin, loads, setup.exchange)
    return gmres_solve(setup.robin, setup.exchange, rhs, solver, reference, loads=loads)


def run_solve(
    config: RunConfig,
    *,
    settings: Optional[Settings] = None,
    history_path: Optional[Path | str] = None,
    problem: Optional[Problem] = None,
    reference: Optional[np.ndarray] = None,
) -> SolveOutcome:
    settings = settings or get_settings()
    problem = problem or build_problem(config, settings=settings)
    if reference is None:
        reference = reference_solution(problem, settings=settings)
    setup = build_schwarz(problem, config.impedance_spec(), settings=settings)
    state = solve_with(problem, setup, reference)

    written: Optional[Path] = None
    if history_path is not None:
        written = write_csv(history_frame(state), history_path)
        LOGGER.info("History written to %s", written)

    report = SolveReport(
        impedance=config.impedance,
        solver=config.solver,
        status=state.status,
        converged=state.converged,
        iterations=state.iteration,
        final_error=state.final_error,
        num_nodes=problem.mesh.num_nodes,
        num_triangles=problem.mesh.num_triangles,
        num_subdomains=problem.partition.num_subdomains,
        n_sigma=problem.skeleton.n_sigma,
        interior_cross_points=len(problem.cross_points.interior_cross_points),
        boundary_cross_points=len(problem.cross_points.boundary_cross_points),
        history=[
            HistoryRecord(iteration=e.iteration, relative_error=e.relative_error, th_residual=e.th_residual)
            for e in state.history
        ],
        history_csv=str(written) if written is not None else None,
    )
    return SolveOutcome(report=report, state=state, reference=reference)


def undecomposed_gmres(problem: Problem, reference: np.ndarray) -> tuple[int, str]:
    """Restarted GMRES on the global system, stopped by the same broken-H1 relative error."""
    config = problem.config
    system = problem.global_problem
    gram = system.gram
    denominator = float(np.sqrt(np.real(np.vdot(reference, gram @ reference))))

    def error_reached(_: int, x: np.ndarray, __: np.ndarray) -> bool:
        diff = x - reference
        return float(np.sqrt(np.real(np.vdot(diff, gram @ diff)))) <= config.tol * denominator

    result = gmres(
        lambda x: system.A @ x,
        system.f,
        restart=config.restart,
        tol=np.finfo(np.float64).eps,
        max_iter=config.max_iter,
        callback=error_reached,
        callback_every=config.error_every,
    )
    LOGGER.info("Undecomposed GMRES: %s after %d iterations", result.status, result.iterations)
    return result.iterations, result.status


def run_direct(
    config: RunConfig,
    *,
    settings: Optional[Settings] = None,
    reference_path: Optional[Path | str] = None,
    baseline: bool = True,
) -> DirectReport:
    settings = settings or get_settings()
    problem = build_problem(config.with_updates(reference_file=None), settings=settings)
    u = reference_solution(problem, settings=settings)
    system = problem.global_problem
    residual = float(np.linalg.norm(system.A @ u - system.f) / max(np.linalg.norm(system.f), 1e-300))
    LOGGER.info("Direct solve: %d DOFs, relative residual %.3e", system.size, residual)

    written = write_reference_file(reference_path, problem.mesh, u) if reference_path is not None else None
    iterations, status = undecomposed_gmres(problem, u) if baseline else (None, None)
    return DirectReport(
        num_dofs=system.size,
        residual=residual,
        gmres_iterations=iterations,
        gmres_status=status,
        reference_file=str(written) if written is not None else None,
    )


def sweep_config(base: RunConfig, axis: SweepAxis, value: float, *, weak_scaling: bool = False) -> RunConfig:
    if axis == "N_lambda":
        return base.with_updates(n_lambda=value)
    if axis == "kappa":
        return base.with_updates(kappa=value, n_lambda=KAPPA_SWEEP_RESOLUTION * math.sqrt(value))
    if axis == "J":
        if value != int(value) or value < 1:
            raise InvalidArgumentError(f"J sweep values must be positive integers, got {value}")
        changes: dict = {"num_subdomains": int(value)}
        if weak_scaling:
            # Domain area grows like J, so the radius grows like J^(1/2).
            changes["radius"] = base.radius * math.sqrt(value / base.num_subdomains)
        return base.with_updates(**changes)
    if axis == "mu_r":
        return base.with_updates(mu_r=value)
    raise InvalidArgumentError(f"unknown sweep axis {axis!r}")


def run_sweep(
    base: RunConfig,
    axis: SweepAxis,
    values: Sequence[float],
    *,
    impedances: Iterable[ImpedanceKind] = ALL_IMPEDANCES,
    weak_scaling: bool = False,
    baseline: bool = False,
    settings: Optional[Settings] = None,
    output_path: Optional[Path | str] = None,
) -> list[SweepRow]:
    """One row per value and impedance; the reference is shared by all impedances of a value."""
    settings = settings or get_settings()
    impedances = list(impedances)
    rows: list[SweepRow] = []
    for value in values:
        config = sweep_config(base, axis, value, weak_scaling=weak_scaling)
        try:
            problem = build_problem(config, settings=settings)
            reference = reference_solution(problem, settings=settings)
            no_ddm = undecomposed_gmres(problem, reference)[0] if baseline else None
            for kind in impedances:
                member = config.with_updates(impedance=kind)
                outcome = run_solve(
                    member,
                    settings=settings,
                    problem=replace(problem, config=member),
                    reference=reference,
                )
                rows.append(
                    SweepRow(
                        axis=axis,
                        value=float(value),
                        impedance=kind,
                        iterations=outcome.report.iterations,
                        converged=outcome.report.converged,
                        final_error=outcome.report.final_error,
                        no_ddm_iterations=no_ddm,
                    )
                )
                LOGGER.info("Sweep %s=%g %s: %d iterations", axis, value, kind, outcome.report.iterations)
        except HelmDDMError as exc:
            raise ConvergenceError(f"sweep member {axis}={value} failed: {exc}") from exc

    if output_path is not None:
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=SWEEP_COLUMNS)
        write_csv(frame, output_path)
    return rows


def run_diagnostics(
    config: RunConfig,
    impedances: Iterable[ImpedanceKind] = ALL_IMPEDANCES,
    *,
    settings: Optional[Settings] = None,
    output_path: Optional[Path | str] = None,
) -> DiagnosticsReport:
    """gamma_h, lambda_h^+- and the Richardson rate bound per impedance."""
    settings = settings or get_settings()
    problem = build_problem(config, settings=settings)
    kappa_inf = problem.material.kappa_inf
    schur = build_impedances(
        problem.mesh,
        problem.partition,
        config.impedance_spec("Lambda"),
        kappa_inf=kappa_inf,
        topologies=problem.topologies,
    )
    rows = []
    for kind in impedances:
        setup = build_schwarz(problem, config.impedance_spec(kind), settings=settings)
        gamma = estimate_gamma(
            skeleton_operator(setup.robin, setup.exchange),
            problem.skeleton,
            setup.impedance,
            max_dim=settings.max_dense_dim,
        )
        lambda_minus, lambda_plus = compute_lambda_bounds(
            setup.impedance.T, schur, max_dim=settings.max_dense_dim
        )
        rows.append(
            DiagnosticsRow(
                impedance=kind,
                gamma=gamma,
                lambda_minus=lambda_minus,
                lambda_plus=lambda_plus,
                rate_bound=richardson_rate_bound(gamma, config.r),
            )
        )
        LOGGER.info(
            "Diagnostics %s: gamma=%.6f lambda=[%.6f, %.6f]", kind, gamma, lambda_minus, lambda_plus
        )

    written = None
    if output_path is not None:
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=DIAGNOSTICS_COLUMNS)
        written = write_csv(frame, output_path)
    return DiagnosticsReport(rows=rows, csv=str(written) if written is not None else None)
