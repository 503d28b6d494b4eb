"""Build the discrete problem of a run: mesh, medium, partition, local systems, reference."""

from __future__ import annotations

import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..core.assembly import (
    GlobalProblem,
    LocalProblem,
    Material,
    assemble_global,
    assemble_local,
    plane_wave_robin_data,
    solve_global,
)
from ..core.config import Settings, get_settings
from ..core.ddm import Exchange, RobinOperators, build_robin_operators
from ..core.errors import ConfigError, InvalidArgumentError, MeshParseError
from ..core.impedance import ImpedanceMatrices, assemble_t_sigma, build_impedances
from ..core.mesh import (
    CrossPointReport,
    Mesh,
    Partition,
    SubdomainTopology,
    build_subdomains,
    detect_cross_points,
    generate_disk_mesh,
    partition_mesh,
    read_msh,
)
from ..core.skeleton import SkeletonMap, build_skeleton_map
from ..schemas.run import ImpedanceSpec, RunConfig

LOGGER = logging.getLogger(__name__)

REFERENCE_HEADER = np.dtype("<u8")
REFERENCE_VALUES = np.dtype("<c16")
# Keys whose value is an inline table, e.g. region_mu = { 1 = 1.0, 2 = 5.0 }.
TABLE_KEYS = frozenset({"region_mu"})


@dataclass(frozen=True, eq=False)
class Problem:
    config: RunConfig
    mesh: Mesh
    material: Material
    partition: Partition
    topologies: tuple[SubdomainTopology, ...]
    cross_points: CrossPointReport
    skeleton: SkeletonMap
    local_problems: tuple[LocalProblem, ...]
    global_problem: GlobalProblem


@dataclass(frozen=True, eq=False)
class SchwarzSetup:
    spec: ImpedanceSpec
    impedance: ImpedanceMatrices
    robin: RobinOperators
    exchange: Exchange


def load_config_file(path: Path | str) -> dict[str, Any]:
    """Flat key = value TOML document."""
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML ({exc})") from exc
    nested = [key for key, value in data.items() if isinstance(value, dict) and key not in TABLE_KEYS]
    if nested:
        raise ConfigError("config file must be flat key = value pairs", fields=nested)
    return data


def load_mesh(config: RunConfig, settings: Settings) -> Mesh:
    if config.mesh_file is not None:
        try:
            text = Path(config.mesh_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read mesh file ({exc})", fields=("mesh_file",)) from exc
        mesh = read_msh(text)
        if mesh.num_nodes > settings.max_mesh_nodes:
            LOGGER.warning("Mesh %s has %d nodes, above the configured cap", config.mesh_file, mesh.num_nodes)
        return mesh
    return generate_disk_mesh(config.radius, config.target_h, max_nodes=settings.max_mesh_nodes)


def build_material(config: RunConfig, mesh: Mesh) -> Material:
    """mu per region tag when ``region_mu`` is set, else the centred inclusion or a homogeneous medium."""
    if config.region_mu is not None:
        try:
            return Material.from_regions(mesh, config.complex_kappa, config.region_mu)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc), fields=("region_mu",)) from exc
    if config.mu_r > 0:
        return Material.with_inclusion(mesh, config.complex_kappa, config.mu_r, radius=config.inclusion_radius)
    return Material.homogeneous(mesh, config.complex_kappa)


def build_problem(config: RunConfig, *, settings: Optional[Settings] = None) -> Problem:
    settings = settings or get_settings()
    mesh = load_mesh(config, settings)
    material = build_material(config, mesh)
    partition = partition_mesh(
        mesh,
        config.num_subdomains,
        config.partition,
        seed=config.seed,
        owner_file=config.partition_file,
    )
    topologies = tuple(build_subdomains(mesh, partition))
    robin_data = plane_wave_robin_data()
    local_problems = tuple(
        assemble_local(mesh, partition, t.index, material, None, robin_data, topology=t) for t in topologies
    )
    cross_points = detect_cross_points(mesh, partition)
    LOGGER.info(
        "Problem: %d nodes, %d triangles, J=%d, %d interior / %d boundary cross-points",
        mesh.num_nodes,
        mesh.num_triangles,
        partition.num_subdomains,
        len(cross_points.interior_cross_points),
        len(cross_points.boundary_cross_points),
    )
    return Problem(
        config=config,
        mesh=mesh,
        material=material,
        partition=partition,
        topologies=topologies,
        cross_points=cross_points,
        skeleton=build_skeleton_map(mesh, partition, topologies),
        local_problems=local_problems,
        global_problem=assemble_global(mesh, material, None, robin_data),
    )


def build_schwarz(problem: Problem, spec: ImpedanceSpec, *, settings: Optional[Settings] = None) -> SchwarzSetup:
    settings = settings or get_settings()
    matrices = build_impedances(
        problem.mesh,
        problem.partition,
        spec,
        kappa_inf=problem.material.kappa_inf,
        topologies=problem.topologies,
        workers=settings.local_solve_workers,
    )
    impedance = assemble_t_sigma(problem.skeleton, matrices)
    robin = build_robin_operators(
        problem.local_problems,
        matrices,
        workers=settings.local_solve_workers,
        pivot_threshold=settings.lu_pivot_threshold,
    )
    return SchwarzSetup(spec=spec, impedance=impedance, robin=robin, exchange=Exchange(problem.skeleton, impedance))


def write_reference_file(path: Path | str, mesh: Mesh, u: np.ndarray) -> Path:
    """Header: node and triangle counts as little-endian uint64; then complex128 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(u, dtype=REFERENCE_VALUES)
    if values.shape != (mesh.num_nodes,):
        raise InvalidArgumentError(f"reference has {values.size} values, mesh has {mesh.num_nodes} nodes")
    with open(path, "wb") as handle:
        handle.write(np.array([mesh.num_nodes, mesh.num_triangles], dtype=REFERENCE_HEADER).tobytes())
        handle.write(values.tobytes())
    return path


def read_reference_file(path: Path | str, mesh: Mesh) -> np.ndarray:
    raw = Path(path).read_bytes()
    header_size = 2 * REFERENCE_HEADER.itemsize
    if len(raw) < header_size:
        raise MeshParseError(f"reference file {path} is truncated")
    num_nodes, num_triangles = np.frombuffer(raw[:header_size], dtype=REFERENCE_HEADER).tolist()
    if (num_nodes, num_triangles) != (mesh.num_nodes, mesh.num_triangles):
        raise ConfigError(
            f"reference file is for {num_nodes} nodes / {num_triangles} triangles, "
            f"mesh has {mesh.num_nodes} / {mesh.num_triangles}",
            fields=("reference_file",),
        )
    values = np.frombuffer(raw[header_size:], dtype=REFERENCE_VALUES)
    if values.size != num_nodes:
        raise MeshParseError(f"reference file {path} holds {values.size} values, header says {num_nodes}")
    return values.astype(np.complex128)


def reference_solution(problem: Problem, *, settings: Optional[Settings] = None) -> np.ndarray:
    """u^(inf): the undecomposed direct solve, or the stored one when ``reference_file`` is set."""
    settings = settings or get_settings()
    if problem.config.reference_file is not None and Path(problem.config.reference_file).exists():
        LOGGER.info("Loading reference solution from %s", problem.config.reference_file)
        return read_reference_file(problem.config.reference_file, problem.mesh)
    return solve_global(problem.global_problem, pivot_threshold=settings.lu_pivot_threshold)
