"""Command-line entry point: ``python -m helmddm <subcommand>``.

Exit codes: 0 success / converged, 1 error, 2 configuration error,
3 iteration cap reached or stagnation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .core.config import Settings, get_settings
from .core.errors import ConfigError, ConvergenceError, HelmDDMError
from .core.logging import setup_logging
from .core.mesh import detect_cross_points, partition_mesh, write_msh, write_partition_file
from .schemas.run import ALL_IMPEDANCES, RunConfig
from .services.experiments import run_diagnostics, run_direct, run_solve, run_sweep
from .services.problem import load_config_file, load_mesh

LOGGER = logging.getLogger("helmddm.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3

# (flag, RunConfig field, type)
RUN_OPTIONS: tuple[tuple[str, str, Any], ...] = (
    ("--radius", "radius", float),
    ("--kappa", "kappa", float),
    ("--kappa-imag", "kappa_imag", float),
    ("--mu-r", "mu_r", float),
    ("--inclusion-radius", "inclusion_radius", float),
    ("--n-lambda", "n_lambda", float),
    ("--subdomains", "num_subdomains", int),
    ("--partition", "partition", str),
    ("--partition-file", "partition_file", Path),
    ("--mesh-file", "mesh_file", Path),
    ("--impedance", "impedance", str),
    ("--kappa-r", "kappa_r", float),
    ("--a", "a", float),
    ("--b", "b", float),
    ("--delta", "delta", float),
    ("--solver", "solver", str),
    ("--r", "r", float),
    ("--tol", "tol", float),
    ("--restart", "restart", int),
    ("--max-iter", "max_iter", int),
    ("--error-every", "error_every", str),
    ("--seed", "seed", int),
    ("--reference-file", "reference_file", Path),
)


def _region_mu(text: str) -> tuple[int, float]:
    tag, sep, mu = text.partition("=")
    try:
        if not sep:
            raise ValueError(text)
        return int(tag), float(mu)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TAG=MU, got {text!r}") from None


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Flat TOML file with RunConfig keys")
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    group = parser.add_argument_group("run configuration (overrides the config file)")
    for flag, field, kind in RUN_OPTIONS:
        group.add_argument(flag, dest=field, type=kind, default=argparse.SUPPRESS)
    group.add_argument(
        "--region-mu",
        dest="region_mu",
        type=_region_mu,
        action="append",
        metavar="TAG=MU",
        default=argparse.SUPPRESS,
        help="mu for one mesh region tag; repeat per region",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="helmddm",
        description="Helmholtz FEM solver with an optimized Schwarz domain decomposition.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh", help="Generate (or re-read) the mesh and write it as MSH 2.2")
    _add_run_options(mesh)
    mesh.add_argument("-o", "--output", type=Path)

    partition = commands.add_parser("partition", help="Partition the mesh and write the owner file")
    _add_run_options(partition)
    partition.add_argument("-o", "--output", type=Path)

    direct = commands.add_parser("direct", help="Direct reference solve and undecomposed GMRES baseline")
    _add_run_options(direct)
    direct.add_argument("-o", "--output", type=Path, help="Reference solution file")
    direct.add_argument("--no-baseline", action="store_true", help="Skip the undecomposed GMRES run")

    solve = commands.add_parser("solve", help="Solve the skeleton equation")
    _add_run_options(solve)
    solve.add_argument("-o", "--output", type=Path, help="History CSV")

    sweep = commands.add_parser("sweep", help="Iteration counts over one parameter")
    _add_run_options(sweep)
    sweep.add_argument("--axis", required=True, choices=["N_lambda", "kappa", "J", "mu_r"])
    sweep.add_argument("--values", required=True, type=float, nargs="+")
    sweep.add_argument("--impedances", nargs="+", choices=list(ALL_IMPEDANCES), default=list(ALL_IMPEDANCES))
    sweep.add_argument("--weak-scaling", action="store_true", help="J axis: radius grows like J^(1/2)")
    sweep.add_argument("--baseline", action="store_true", help="Add the undecomposed GMRES count")
    sweep.add_argument("-o", "--output", type=Path)

    diagnostics = commands.add_parser("diagnostics", help="gamma_h and lambda_h bounds per impedance")
    _add_run_options(diagnostics)
    diagnostics.add_argument("--impedances", nargs="+", choices=list(ALL_IMPEDANCES), default=list(ALL_IMPEDANCES))
    diagnostics.add_argument("-o", "--output", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file keys first, then every flag given on the command line."""
    data: dict[str, Any] = load_config_file(args.config) if args.config is not None else {}
    for _, field, _ in RUN_OPTIONS:
        if hasattr(args, field):
            data[field] = getattr(args, field)
    if hasattr(args, "region_mu"):
        data["region_mu"] = dict(args.region_mu)
    return RunConfig.from_mapping(data)


def _output(args: argparse.Namespace, settings: Settings, default: str) -> Path:
    return args.output if args.output is not None else settings.output_path(default)


def _cmd_mesh(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    mesh = load_mesh(config, settings)
    path = _output(args, settings, "mesh.msh")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_msh(mesh), encoding="utf-8")
    print(f"mesh: {mesh.num_nodes} nodes, {mesh.num_triangles} triangles -> {path}")
    return EXIT_OK


def _cmd_partition(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    mesh = load_mesh(config, settings)
    partition = partition_mesh(
        mesh, config.num_subdomains, config.partition, seed=config.seed, owner_file=config.partition_file
    )
    report = detect_cross_points(mesh, partition)
    path = _output(args, settings, "partition.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_partition_file(partition), encoding="utf-8")
    print(
        f"partition: J={partition.num_subdomains}, imbalance {partition.imbalance:.3f}, "
        f"{len(report.interior_cross_points)} interior / {len(report.boundary_cross_points)} boundary "
        f"cross-points -> {path}"
    )
    return EXIT_OK


def _cmd_direct(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    path = _output(args, settings, "reference.bin")
    report = run_direct(config, settings=settings, reference_path=path, baseline=not args.no_baseline)
    print(f"direct: {report.num_dofs} DOFs, relative residual {report.residual:.3e} -> {report.reference_file}")
    if report.gmres_iterations is not None:
        print(f"undecomposed GMRES: {report.gmres_iterations} iterations ({report.gmres_status})")
        if report.gmres_status != "converged":
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_solve(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    path = _output(args, settings, f"history_{config.impedance}_{config.solver}.csv")
    report = run_solve(config, settings=settings, history_path=path).report
    error = f"{report.final_error:.3e}" if report.final_error is not None else "n/a"
    print(
        f"solve: {report.impedance}/{report.solver} {report.status} after {report.iterations} iterations, "
        f"relative error {error} -> {report.history_csv}"
    )
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_sweep(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    path = _output(args, settings, f"sweep_{args.axis}.csv")
    rows = run_sweep(
        config,
        args.axis,
        args.values,
        impedances=args.impedances,
        weak_scaling=args.weak_scaling,
        baseline=args.baseline,
        settings=settings,
        output_path=path,
    )
    for row in rows:
        print(f"{row.axis}={row.value:g} {row.impedance}: {row.iterations} iterations")
    print(f"sweep -> {path}")
    return EXIT_OK if all(row.converged for row in rows) else EXIT_NOT_CONVERGED


def _cmd_diagnostics(args: argparse.Namespace, config: RunConfig, settings: Settings) -> int:
    path = _output(args, settings, "diagnostics.csv")
    report = run_diagnostics(config, args.impedances, settings=settings, output_path=path)
    for row in report.rows:
        print(
            f"{row.impedance}: gamma={row.gamma:.6f} lambda-={row.lambda_minus:.6f} "
            f"lambda+={row.lambda_plus:.6f} rate<={row.rate_bound:.6f}"
        )
    print(f"diagnostics -> {report.csv}")
    return EXIT_OK


COMMANDS = {
    "mesh": _cmd_mesh,
    "partition": _cmd_partition,
    "direct": _cmd_direct,
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "diagnostics": _cmd_diagnostics,
}


def exit_code_for(exc: HelmDDMError) -> int:
    if isinstance(exc, ConfigError) or isinstance(exc.__cause__, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ConvergenceError) and isinstance(exc.__cause__, HelmDDMError):
        return exit_code_for(exc.__cause__)
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None, *, settings: Optional[Settings] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = settings or get_settings()
    setup_logging(settings, verbose=args.verbose)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config, settings)
    except HelmDDMError as exc:
        LOGGER.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
