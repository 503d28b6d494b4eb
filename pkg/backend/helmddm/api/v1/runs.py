"""Run endpoints: DDM solve, direct reference and spectral diagnostics."""

import logging

from fastapi import APIRouter, Depends

from ...core.config import Settings, get_settings
from ...schemas import DiagnosticsReport, DiagnosticsRequest, DirectReport, RunConfig, SolveReport
from ...services.experiments import run_diagnostics, run_direct, run_solve

LOGGER = logging.getLogger(__name__)

router = APIRouter(prefix="/runs", tags=["runs"])


@router.post("/solve", response_model=SolveReport, summary="Solve with the Schwarz method")
def solve(config: RunConfig, settings: Settings = Depends(get_settings)) -> SolveReport:
    LOGGER.info("Solve request: impedance=%s solver=%s J=%d", config.impedance, config.solver, config.num_subdomains)
    return run_solve(config, settings=settings).report


@router.post("/direct", response_model=DirectReport, summary="Direct solve of the undecomposed system")
def direct(config: RunConfig, settings: Settings = Depends(get_settings)) -> DirectReport:
    return run_direct(config, settings=settings)


@router.post("/diagnostics", response_model=DiagnosticsReport, summary="gamma_h and lambda_h bounds")
def diagnostics(request: DiagnosticsRequest, settings: Settings = Depends(get_settings)) -> DiagnosticsReport:
    return run_diagnostics(request.config, request.impedances, settings=settings)
