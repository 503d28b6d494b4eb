"""P1 finite-element assembly of the Helmholtz form with Robin boundary condition.

Volume form:   int mu grad u . grad v - kappa^2 u v  -  i int_{dOmega} kappa u v
Load:          int f v + int_{dOmega} g v

Coefficients are constant per triangle, so element matrices are closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .linsolve import SparseLU, lu_solve, sparse_lu_factor
from .mesh import Mesh, Partition, SubdomainTopology, subdomain_topology

LOGGER = logging.getLogger(__name__)

# g(points, outward_normals, mu, kappa) evaluated at edge quadrature points.
BoundaryData = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Source = Union[None, complex, float, np.ndarray]

P1_MASS_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0
EDGE_MASS_REFERENCE = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
EDGE_STIFFNESS_REFERENCE = np.array([[1.0, -1.0], [-1.0, 1.0]])
_GAUSS2 = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class Material:
    """Per-triangle coefficients: mu > 0, Re kappa >= 0, Im kappa >= 0."""

    mu: np.ndarray
    kappa: np.ndarray

    def __post_init__(self) -> None:
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        kappa = np.ascontiguousarray(self.kappa, dtype=np.complex128)
        if mu.shape != kappa.shape or mu.ndim != 1:
            raise InvalidArgumentError("mu and kappa must be 1D arrays of equal length")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise InvalidArgumentError("mu must be finite and strictly positive")
        if not np.all(np.isfinite(kappa)) or np.any(kappa.real < 0) or np.any(kappa.imag < 0):
            raise InvalidArgumentError("kappa must satisfy Re kappa >= 0 and Im kappa >= 0")
        mu.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)

    @property
    def kappa_inf(self) -> float:
        return float(max(1.0, np.abs(self.kappa).max()))

    @classmethod
    def homogeneous(cls, mesh: Mesh, kappa: complex, *, mu: float = 1.0) -> "Material":
        m = mesh.num_triangles
        return cls(mu=np.full(m, mu), kappa=np.full(m, kappa, dtype=np.complex128))

    @classmethod
    def with_inclusion(
        cls,
        mesh: Mesh,
        kappa: complex,
        mu_r: float,
        *,
        radius: float = 0.5,
        center: tuple[float, float] = (0.0, 0.0),
    ) -> "Material":
        """mu = 1 + mu_r on triangles whose centroid lies within ``radius`` of ``center``."""
        if mu_r < 0:
            raise InvalidArgumentError(f"mu_r must be >= 0, got {mu_r}")
        inside = np.linalg.norm(mesh.centroids - np.asarray(center), axis=1) <= radius
        mu = np.where(inside, 1.0 + mu_r, 1.0)
        return cls(mu=mu, kappa=np.full(mesh.num_triangles, kappa, dtype=np.complex128))

    @classmethod
    def from_regions(
        cls,
        mesh: Mesh,
        kappa: complex,
        mu_by_region: dict[int, float],
    ) -> "Material":
        missing = set(np.unique(mesh.element_region).tolist()) - set(mu_by_region)
        if missing:
            raise InvalidArgumentError(f"no mu given for region tags {sorted(missing)}")
        mu = np.array([mu_by_region[tag] for tag in mesh.element_region.tolist()], dtype=np.float64)
        return cls(mu=mu, kappa=np.full(mesh.num_triangles, kappa, dtype=np.complex128))


def plane_wave_robin_data(direction: tuple[float, float] = (1.0, 0.0)) -> BoundaryData:
    """g = (mu d_n - i kappa) u_inc for the incident wave u_inc = exp(i kappa d.x)."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)

    def robin_data(points: np.ndarray, normals: np.ndarray, mu: np.ndarray, kappa: np.ndarray) -> np.ndarray:
        incident = np.exp(1j * kappa * (points @ d))
        return 1j * kappa * (mu * (normals @ d) - 1.0) * incident

    return robin_data


def plane_wave(points: np.ndarray, kappa: complex, direction: tuple[float, float] = (1.0, 0.0)) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    return np.exp(1j * kappa * (np.asarray(points) @ (d / np.linalg.norm(d))))


def p1_gradients(nodes: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangle areas and constant barycentric gradients, shape (m, 3, 2)."""
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    # grad phi_i is the opposite edge rotated by +90 degrees over 2|T|.
    opposite = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    grads = np.stack([-opposite[..., 1], opposite[..., 0]], axis=-1) / (2.0 * areas)[:, None, None]
    return areas, grads


def element_stiffness(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    areas, grads = p1_gradients(nodes, triangles)
    return areas[:, None, None] * np.einsum("eik,ejk->eij", grads, grads)


def element_mass(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    areas, _ = p1_gradients(nodes, triangles)
    return areas[:, None, None] * P1_MASS_REFERENCE


def edge_lengths(nodes: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1)


def h1_gram(mesh: Mesh, elements: np.ndarray, volume_nodes: np.ndarray, kappa_inf: float) -> sp.csr_matrix:
    """Real SPD Gram matrix of int grad u . grad v + kappa_inf^2 u v on the given triangles."""
    triangles = mesh.triangles[elements]
    dofs = np.searchsorted(volume_nodes, triangles)
    local = element_stiffness(mesh.nodes, triangles) + kappa_inf**2 * element_mass(mesh.nodes, triangles)
    return scatter_local(local, dofs, volume_nodes.size)


def scatter_local(local: np.ndarray, dofs: np.ndarray, size: int) -> sp.csr_matrix:
    """Sum element blocks ``local[e]`` into a ``size x size`` sparse matrix."""
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(size, size))


def edge_mass_matrix(
    nodes: np.ndarray,
    edges: np.ndarray,
    dofs: np.ndarray,
    size: int,
    weights: Optional[np.ndarray] = None,
) -> sp.csr_matrix:
    lengths = edge_lengths(nodes, edges)
    if weights is not None:
        lengths = lengths * weights
    return scatter_local(lengths[:, None, None] * EDGE_MASS_REFERENCE, dofs, size)


def edge_stiffness_matrix(nodes: np.ndarray, edges: np.ndarray, dofs: np.ndarray, size: int) -> sp.csr_matrix:
    lengths = edge_lengths(nodes, edges)
    return scatter_local(EDGE_STIFFNESS_REFERENCE / lengths[:, None, None], dofs, size)


def _edge_elements(mesh: Mesh, elements: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Triangle (from ``elements``) that traverses each directed edge."""
    n = mesh.num_nodes
    tri = mesh.triangles[elements]
    directed = tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = directed[:, 0] * n + directed[:, 1]
    order = np.argsort(keys)
    wanted = edges[:, 0] * n + edges[:, 1]
    pos = np.searchsorted(keys[order], wanted)
    if np.any(pos >= keys.size) or np.any(keys[order][np.minimum(pos, keys.size - 1)] != wanted):
        raise InvalidArgumentError("edge is not traversed by any triangle of the subdomain")
    return elements[order[pos] // 3]


def _source_values(source: Source, num_triangles: int) -> Optional[np.ndarray]:
    if source is None:
        return None
    values = np.broadcast_to(np.asarray(source, dtype=np.complex128), (num_triangles,))
    if not np.any(values):
        return None
    return np.asarray(values)


def _assemble_block(
    mesh: Mesh,
    material: Material,
    elements: np.ndarray,
    volume_nodes: np.ndarray,
    robin_edges: np.ndarray,
    source: Source,
    boundary_data: Optional[BoundaryData],
) -> tuple[sp.csc_matrix, np.ndarray, sp.csr_matrix]:
    """Helmholtz matrix, load vector and kappa_inf-weighted H1 Gram on a set of triangles."""
    if material.mu.size != mesh.num_triangles:
        raise InvalidArgumentError("material does not match the mesh triangle count")
    size = volume_nodes.size
    triangles = mesh.triangles[elements]
    dofs = np.searchsorted(volume_nodes, triangles)
    stiffness = element_stiffness(mesh.nodes, triangles)
    mass = element_mass(mesh.nodes, triangles)
    mu = material.mu[elements][:, None, None]
    kappa = material.kappa[elements]

    volume = mu * stiffness - (kappa**2)[:, None, None] * mass
    matrix = scatter_local(volume.astype(np.complex128), dofs, size)
    gram = scatter_local(stiffness + material.kappa_inf**2 * mass, dofs, size)

    load = np.zeros(size, dtype=np.complex128)
    values = _source_values(source, mesh.num_triangles)
    if values is not None:
        # int phi_i = |T| / 3 for every P1 hat function.
        share = values[elements] * mass.sum(axis=(1, 2)) / 3.0
        np.add.at(load, dofs, np.repeat(share[:, None], 3, axis=1))

    if robin_edges.size:
        adjacent = _edge_elements(mesh, elements, robin_edges)
        edge_dofs = np.searchsorted(volume_nodes, robin_edges)
        lengths = edge_lengths(mesh.nodes, robin_edges)
        robin = (material.kappa[adjacent] * lengths)[:, None, None] * EDGE_MASS_REFERENCE
        matrix = matrix - 1j * scatter_local(robin, edge_dofs, size)
        if boundary_data is not None:
            load += _robin_load(mesh, robin_edges, edge_dofs, size, material, adjacent, boundary_data)

    return sp.csc_matrix(matrix), load, sp.csr_matrix(gram)


def _robin_load(
    mesh: Mesh,
    edges: np.ndarray,
    edge_dofs: np.ndarray,
    size: int,
    material: Material,
    adjacent: np.ndarray,
    boundary_data: BoundaryData,
) -> np.ndarray:
    start = mesh.nodes[edges[:, 0]]
    tangent = mesh.nodes[edges[:, 1]] - start
    lengths = np.linalg.norm(tangent, axis=1)
    # Edges are oriented counter-clockwise around the domain, so the outward
    # normal is the tangent rotated by -90 degrees.
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    load = np.zeros(size, dtype=np.complex128)
    for s in _GAUSS2:
        points = start + s * tangent
        g = np.asarray(
            boundary_data(points, normals, material.mu[adjacent], material.kappa[adjacent]),
            dtype=np.complex128,
        )
        weight = 0.5 * lengths * g
        np.add.at(load, edge_dofs[:, 0], weight * (1.0 - s))
        np.add.at(load, edge_dofs[:, 1], weight * s)
    return load


@dataclass(frozen=True, eq=False)
class LocalProblem:
    """Subdomain data: A_j, B_j, f_j, the H1 Gram, and later T_j and the Robin factorization."""

    topology: SubdomainTopology
    A: sp.csc_matrix
    B: sp.csr_matrix
    f: np.ndarray
    gram: sp.csr_matrix
    T: Optional[sp.csr_matrix] = None
    robin_factorization: Optional[SparseLU] = None

    @property
    def index(self) -> int:
        return self.topology.index

    @property
    def num_volume_dofs(self) -> int:
        return self.topology.num_volume_dofs

    @property
    def num_boundary_dofs(self) -> int:
        return self.topology.num_boundary_dofs


@dataclass(frozen=True, eq=False)
class GlobalProblem:
    A: sp.csc_matrix
    f: np.ndarray
    gram: sp.csr_matrix

    @property
    def size(self) -> int:
        return int(self.f.size)


def trace_matrix(topology: SubdomainTopology) -> sp.csr_matrix:
    n_boundary = topology.num_boundary_dofs
    return sp.csr_matrix(
        (np.ones(n_boundary), (np.arange(n_boundary), topology.boundary_local)),
        shape=(n_boundary, topology.num_volume_dofs),
    )


def assemble_trace_matrix(mesh: Mesh, partition: Partition, j: int) -> sp.csr_matrix:
    return trace_matrix(subdomain_topology(mesh, partition, j))


def assemble_local(
    mesh: Mesh,
    partition: Partition,
    j: int,
    material: Material,
    source: Source = None,
    boundary_data: Optional[BoundaryData] = None,
    *,
    topology: Optional[SubdomainTopology] = None,
) -> LocalProblem:
    topology = topology or subdomain_topology(mesh, partition, j)
    matrix, load, gram = _assemble_block(
        mesh,
        material,
        topology.elements,
        topology.volume_nodes,
        topology.robin_edges,
        source,
        boundary_data,
    )
    LOGGER.debug(
        "Subdomain %d: %d triangles, %d volume DOFs, %d boundary DOFs, %d Robin edges",
        j + 1,
        topology.elements.size,
        topology.num_volume_dofs,
        topology.num_boundary_dofs,
        topology.robin_edges.shape[0],
    )
    return LocalProblem(topology=topology, A=matrix, B=trace_matrix(topology), f=load, gram=gram)


def assemble_global(
    mesh: Mesh,
    material: Material,
    source: Source = None,
    boundary_data: Optional[BoundaryData] = None,
) -> GlobalProblem:
    matrix, load, gram = _assemble_block(
        mesh,
        material,
        np.arange(mesh.num_triangles),
        np.arange(mesh.num_nodes),
        mesh.boundary_edges,
        source,
        boundary_data,
    )
    LOGGER.info("Global system: %d DOFs, nnz=%d", mesh.num_nodes, matrix.nnz)
    return GlobalProblem(A=matrix, f=load, gram=gram)


def solve_global(problem: GlobalProblem, *, pivot_threshold: float = 0.1) -> np.ndarray:
    return lu_solve(sparse_lu_factor(problem.A, pivot_threshold=pivot_threshold), problem.f)


def h1_norm_from_grams(grams: Sequence[sp.spmatrix], u: Sequence[np.ndarray]) -> float:
    if len(grams) != len(u):
        raise InvalidArgumentError(f"expected {len(grams)} subdomain vectors, got {len(u)}")
    total = 0.0
    for j, (gram, block) in enumerate(zip(grams, u)):
        block = np.asarray(block)
        if block.shape != (gram.shape[0],):
            raise InvalidArgumentError(
                f"subdomain {j + 1}: vector has length {block.size}, expected {gram.shape[0]}"
            )
        total += float(np.real(np.vdot(block, gram @ block)))
    return float(np.sqrt(max(total, 0.0)))


def broken_h1_norm(
    mesh: Mesh,
    partition: Partition,
    material: Material,
    u: Sequence[np.ndarray],
) -> float:
    """sqrt(sum_j |grad u_j|^2 + kappa_inf^2 |u_j|^2) over the subdomains, exact for P1."""
    grams = []
    for j in range(partition.num_subdomains):
        elements = partition.elements(j)
        grams.append(h1_gram(mesh, elements, np.unique(mesh.triangles[elements]), material.kappa_inf))
    return h1_norm_from_grams(grams, u)
