"""Impedance operators T_j, the skeleton Gram matrix T_Sigma and the t_h geometry.

All four operators are real symmetric positive definite:

* ``M``       kappa_R times the boundary mass matrix;
* ``K``       a * tangential stiffness + b * boundary mass;
* ``W``       screened hypersingular form with kernel K0(|x - y| / delta) / (2 pi);
* ``Lambda``  Schur complement of the kappa_inf-weighted H1 Gram matrix (discrete
              harmonic extension energy).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import k0

from ..schemas.run import ImpedanceSpec
from .assembly import edge_mass_matrix, edge_stiffness_matrix, h1_gram
from .errors import InvalidArgumentError, ResourceLimitError, SingularFactorizationError
from .linsolve import CholeskyFactor, dense_sym_generalized_eigs, spd_cholesky
from .mesh import Mesh, Partition, SubdomainTopology, subdomain_topology
from .skeleton import MultiTrace, SkeletonMap

LOGGER = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
# Identical-edge moments of ln|s - t| against the two P1 hat functions on [0, 1]^2.
_SELF_LOG_MOMENTS = np.array([[-7.0, -5.0], [-5.0, -7.0]]) / 16.0
_SELF_LOG_TOTAL = -1.5
_GAUSS_ORDER = 8
_ROW_BLOCK = 32


def _gauss_unit(order: int) -> tuple[np.ndarray, np.ndarray]:
    points, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (points + 1.0), 0.5 * weights


def _resolve(
    mesh: Mesh,
    partition: Partition,
    j: int,
    topology: Optional[SubdomainTopology],
) -> tuple[SubdomainTopology, np.ndarray]:
    topology = topology or subdomain_topology(mesh, partition, j)
    local = np.searchsorted(topology.boundary_nodes, topology.boundary_edges)
    return topology, local


def build_despres(
    mesh: Mesh,
    partition: Partition,
    j: int,
    kappa_r: float,
    *,
    topology: Optional[SubdomainTopology] = None,
) -> sp.csr_matrix:
    if kappa_r <= 0:
        raise InvalidArgumentError(f"kappa_R must be positive, got {kappa_r}")
    topology, local = _resolve(mesh, partition, j, topology)
    mass = edge_mass_matrix(mesh.nodes, topology.boundary_edges, local, topology.num_boundary_dofs)
    return sp.csr_matrix(kappa_r * mass)


def build_second_order(
    mesh: Mesh,
    partition: Partition,
    j: int,
    a: float,
    b: float,
    *,
    topology: Optional[SubdomainTopology] = None,
) -> sp.csr_matrix:
    if a <= 0 or b <= 0:
        raise InvalidArgumentError(f"second-order impedance needs a, b > 0, got a={a}, b={b}")
    topology, local = _resolve(mesh, partition, j, topology)
    size = topology.num_boundary_dofs
    stiffness = edge_stiffness_matrix(mesh.nodes, topology.boundary_edges, local, size)
    mass = edge_mass_matrix(mesh.nodes, topology.boundary_edges, local, size)
    return sp.csr_matrix(a * stiffness + b * mass)


def _screened_kernel(r: np.ndarray, delta: float, *, smooth: bool) -> np.ndarray:
    """K0(r / delta) / (2 pi), or with ln(r) / (2 pi) added back when ``smooth``."""
    positive = r > 0
    safe = np.where(positive, r, 1.0)
    value = k0(safe / delta) / (2.0 * np.pi)
    if not smooth:
        return np.where(positive, value, np.inf)
    limit = (np.log(2.0 * delta) - EULER_GAMMA) / (2.0 * np.pi)
    return np.where(positive, value + np.log(safe) / (2.0 * np.pi), limit)


def _duffy_half(a: np.ndarray, b: np.ndarray, w: np.ndarray, wt: np.ndarray) -> np.ndarray:
    """int over sigma >= tau of ln|sigma a - tau b| psi(sigma) chi(tau), hats ordered (shared, far)."""
    ell = np.log(np.linalg.norm(a[None, :] - w[:, None] * b[None, :], axis=1))
    m0, m1, m2 = (ell / (k + 2) - 1.0 / (k + 2) ** 2 for k in range(3))
    return np.array(
        [
            [np.dot(wt, m0 - (1.0 + w) * m1 + w * m2), np.dot(wt, w * (m1 - m2))],
            [np.dot(wt, m1 - w * m2), np.dot(wt, w * m2)],
        ]
    )


def _adjacent_log_moments(a: np.ndarray, b: np.ndarray, w: np.ndarray, wt: np.ndarray) -> np.ndarray:
    return _duffy_half(a, b, w, wt) + _duffy_half(b, a, w, wt).T


def _interface_labels(mesh: Mesh, partition: Partition, topology: SubdomainTopology) -> np.ndarray:
    """Owner of the triangle across each edge of Gamma_j, -1 on the physical boundary."""
    n = mesh.num_nodes
    directed = mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = directed[:, 0] * n + directed[:, 1]
    order = np.argsort(keys)
    sorted_keys = keys[order]
    edges = topology.boundary_edges
    reversed_keys = edges[:, 1] * n + edges[:, 0]
    pos = np.minimum(np.searchsorted(sorted_keys, reversed_keys), sorted_keys.size - 1)
    found = sorted_keys[pos] == reversed_keys
    labels = np.full(edges.shape[0], -1, dtype=np.int64)
    labels[found] = partition.element_owner[order[pos[found]] // 3]
    return labels


def _check_closed(local: np.ndarray, size: int, j: int) -> None:
    degree = np.bincount(local.ravel(), minlength=size)
    if np.any(degree == 0) or np.any(degree % 2):
        raise InvalidArgumentError(f"boundary of subdomain {j + 1} is not a closed polyline")


def build_hypersingular(
    mesh: Mesh,
    partition: Partition,
    j: int,
    a: float,
    delta: float,
    *,
    topology: Optional[SubdomainTopology] = None,
) -> sp.csr_matrix:
    """Galerkin matrix of a * int int G (p' q' + delta^-2 tau.tau p q) on Gamma_j.

    Only edges facing the same neighbour (or both on the physical boundary)
    interact, so disjoint interfaces stay uncoupled.

    Far edge pairs use a tensor Gauss rule. For touching pairs the kernel is
    split as smooth part minus ln(r) / (2 pi); the smooth part goes through
    the same Gauss rule and the logarithm is integrated in closed form
    (identical edges) or after a Duffy split at the shared vertex (adjacent
    edges).
    """
    if a <= 0 or delta <= 0:
        raise InvalidArgumentError(f"hypersingular impedance needs a, delta > 0, got a={a}, delta={delta}")
    topology, local = _resolve(mesh, partition, j, topology)
    size = topology.num_boundary_dofs
    _check_closed(local, size, j)

    edges = topology.boundary_edges
    start = mesh.nodes[edges[:, 0]]
    vectors = mesh.nodes[edges[:, 1]] - start
    lengths = np.linalg.norm(vectors, axis=1)
    tangents = vectors / lengths[:, None]
    n_edges = edges.shape[0]
    labels = _interface_labels(mesh, partition, topology)

    s, ws = _gauss_unit(_GAUSS_ORDER)
    hats = np.column_stack([1.0 - s, s])
    points = start[:, None, :] + s[None, :, None] * vectors[:, None, :]
    weights = np.outer(ws, ws)
    derivative_sign = np.array([-1.0, 1.0])
    dense = np.zeros((size, size))

    for row0 in range(0, n_edges, _ROW_BLOCK):
        rows = np.arange(row0, min(row0 + _ROW_BLOCK, n_edges))
        diff = points[rows, None, :, None, :] - points[None, :, None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        touching = (
            (local[rows, None, 0] == local[None, :, 0])
            | (local[rows, None, 0] == local[None, :, 1])
            | (local[rows, None, 1] == local[None, :, 0])
            | (local[rows, None, 1] == local[None, :, 1])
        )
        same_interface = labels[rows, None] == labels[None, :]
        touching &= same_interface
        kernel = np.where(
            touching[:, :, None, None],
            _screened_kernel(r, delta, smooth=True),
            _screened_kernel(np.where(touching[:, :, None, None], 1.0, r), delta, smooth=False),
        )
        scale = lengths[rows, None] * lengths[None, :]
        weighted = kernel * weights
        plain = scale * weighted.sum(axis=(2, 3))
        hat_moments = scale[:, :, None, None] * np.einsum("efqr,qa,rb->efab", weighted, hats, hats)

        for e_local, f in zip(*np.nonzero(touching)):
            e = rows[e_local]
            if e == f:
                ln_l = np.log(lengths[e])
                log_hat = lengths[e] ** 2 * (ln_l / 4.0 + _SELF_LOG_MOMENTS)
                log_plain = lengths[e] ** 2 * (ln_l + _SELF_LOG_TOTAL)
            else:
                shared = np.intersect1d(local[e], local[f])[0]
                e_far = 1 if local[e, 0] == shared else 0
                f_far = 1 if local[f, 0] == shared else 0
                a_vec = vectors[e] if e_far == 1 else -vectors[e]
                b_vec = vectors[f] if f_far == 1 else -vectors[f]
                moments = _adjacent_log_moments(a_vec, b_vec, s, ws)
                order_e = [1 - e_far, e_far]
                order_f = [1 - f_far, f_far]
                # moments are indexed (shared, far); reorder to the edge's own node order.
                log_hat = np.empty((2, 2))
                for alpha_shared, alpha in enumerate(order_e):
                    for beta_shared, beta in enumerate(order_f):
                        log_hat[alpha, beta] = moments[alpha_shared, beta_shared]
                log_hat *= lengths[e] * lengths[f]
                log_plain = log_hat.sum()
            hat_moments[e_local, f] -= log_hat / (2.0 * np.pi)
            plain[e_local, f] -= log_plain / (2.0 * np.pi)

        tangent_dot = tangents[rows] @ tangents.T
        blocks = a * (
            np.outer(derivative_sign, derivative_sign)[None, None, :, :]
            * (plain / scale)[:, :, None, None]
            + (tangent_dot / delta**2)[:, :, None, None] * hat_moments
        ) * same_interface[:, :, None, None]
        row_dofs = np.broadcast_to(local[rows][:, None, :, None], blocks.shape)
        col_dofs = np.broadcast_to(local[None, :, None, :], blocks.shape)
        np.add.at(dense, (row_dofs, col_dofs), blocks)

    dense = 0.5 * (dense + dense.T)
    LOGGER.debug("W impedance on subdomain %d: %d edges, %d DOFs", j + 1, n_edges, size)
    return sp.csr_matrix(dense)


def schur_from_gram(gram: sp.spmatrix, topology: SubdomainTopology) -> sp.csr_matrix:
    """H_GG - H_GI H_II^-1 H_IG with Gamma and interior split from ``topology``."""
    gram = sp.csr_matrix(gram)
    boundary = topology.boundary_local
    interior = topology.interior_local
    h_gg = gram[boundary][:, boundary].toarray()
    if interior.size == 0:
        return sp.csr_matrix(h_gg)
    h_ig = gram[interior][:, boundary].toarray()
    try:
        eliminated = CholeskyFactor(gram[interior][:, interior]).solve(h_ig)
    except SingularFactorizationError as exc:
        raise SingularFactorizationError(
            f"interior H1 block is not SPD ({exc})", topology.index + 1
        ) from exc
    schur = h_gg - h_ig.T @ eliminated
    return sp.csr_matrix(0.5 * (schur + schur.T))


def build_schur(
    mesh: Mesh,
    partition: Partition,
    j: int,
    kappa_inf: float,
    *,
    topology: Optional[SubdomainTopology] = None,
) -> sp.csr_matrix:
    topology = topology or subdomain_topology(mesh, partition, j)
    gram = h1_gram(mesh, topology.elements, topology.volume_nodes, kappa_inf)
    return schur_from_gram(gram, topology)


def build_impedance(
    mesh: Mesh,
    partition: Partition,
    j: int,
    spec: ImpedanceSpec,
    *,
    kappa_inf: float,
    topology: Optional[SubdomainTopology] = None,
) -> sp.csr_matrix:
    if spec.kind == "M":
        return build_despres(mesh, partition, j, spec.kappa_r, topology=topology)
    if spec.kind == "K":
        return build_second_order(mesh, partition, j, spec.a, spec.b, topology=topology)
    if spec.kind == "W":
        return build_hypersingular(mesh, partition, j, spec.a, spec.delta, topology=topology)
    if spec.kind == "Lambda":
        return build_schur(mesh, partition, j, kappa_inf, topology=topology)
    raise InvalidArgumentError(f"unknown impedance kind {spec.kind!r}")


def build_impedances(
    mesh: Mesh,
    partition: Partition,
    spec: ImpedanceSpec,
    *,
    kappa_inf: float,
    topologies: Optional[Sequence[SubdomainTopology]] = None,
    workers: int = 1,
) -> list[sp.csr_matrix]:
    """T_j for every subdomain, in subdomain order."""
    if topologies is None:
        topologies = [subdomain_topology(mesh, partition, j) for j in range(partition.num_subdomains)]

    def build(topology: SubdomainTopology) -> sp.csr_matrix:
        return build_impedance(mesh, partition, topology.index, spec, kappa_inf=kappa_inf, topology=topology)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matrices = list(pool.map(build, topologies))
    else:
        matrices = [build(topology) for topology in topologies]
    LOGGER.info("Built %s impedance on %d subdomains", spec.kind, len(matrices))
    return matrices


@dataclass(frozen=True, eq=False)
class ImpedanceMatrices:
    T: tuple[sp.csr_matrix, ...]
    T_sigma: sp.csr_matrix
    T_sigma_factorization: CholeskyFactor
    skeleton: SkeletonMap

    @cached_property
    def block_diagonal(self) -> sp.csr_matrix:
        return sp.csr_matrix(sp.block_diag(self.T, format="csr"))

    def apply(self, p: MultiTrace) -> MultiTrace:
        """Blockwise T_j p_j."""
        return p.like(self.block_diagonal @ p.data)

    def inner(self, p: MultiTrace, q: MultiTrace) -> complex:
        return th_inner(self.T, p, q)

    def norm(self, p: MultiTrace) -> float:
        return th_norm(self.T, p)


def assemble_t_sigma(skeleton: SkeletonMap, matrices: Sequence[sp.spmatrix]) -> ImpedanceMatrices:
    """T_Sigma = sum_j Q_j^* T_j Q_j, accumulated in subdomain order and factorized once."""
    if len(matrices) != skeleton.num_subdomains:
        raise InvalidArgumentError(f"expected {skeleton.num_subdomains} impedance matrices, got {len(matrices)}")
    blocks = []
    t_sigma = sp.csr_matrix((skeleton.n_sigma, skeleton.n_sigma))
    for j, (matrix, q) in enumerate(zip(matrices, skeleton.Q)):
        matrix = sp.csr_matrix(matrix)
        if matrix.shape != (q.shape[0], q.shape[0]):
            raise InvalidArgumentError(f"T_{j + 1} has shape {matrix.shape}, expected {(q.shape[0],) * 2}")
        asymmetry = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
        if asymmetry > 1e-12 * max(abs(matrix).max(), 1.0):
            raise InvalidArgumentError(f"T_{j + 1} is not symmetric (deviation {asymmetry:.2e})")
        blocks.append(matrix)
        t_sigma = t_sigma + q.T @ matrix @ q
    t_sigma = sp.csr_matrix(t_sigma)
    try:
        factorization = spd_cholesky(t_sigma)
    except SingularFactorizationError as exc:
        raise SingularFactorizationError(f"T_sigma is not SPD, check the impedance matrices ({exc})") from exc
    LOGGER.info("T_sigma: N_sigma=%d nnz=%d", skeleton.n_sigma, t_sigma.nnz)
    return ImpedanceMatrices(
        T=tuple(blocks),
        T_sigma=t_sigma,
        T_sigma_factorization=factorization,
        skeleton=skeleton,
    )


def th_inner(matrices: Sequence[sp.spmatrix], p: MultiTrace, q: MultiTrace) -> complex:
    """t_h(p, q) = sum_j q_j^* T_j p_j."""
    if p.num_blocks != len(matrices) or q.num_blocks != len(matrices):
        raise InvalidArgumentError("multi-trace block count does not match the impedance")
    total = 0.0 + 0.0j
    for matrix, p_j, q_j in zip(matrices, p.blocks, q.blocks):
        if p_j.size != matrix.shape[0] or q_j.size != matrix.shape[0]:
            raise InvalidArgumentError("multi-trace block length does not match T_j")
        total += np.vdot(q_j, matrix @ p_j)
    return complex(total)


def th_norm(matrices: Sequence[sp.spmatrix], p: MultiTrace) -> float:
    return float(np.sqrt(max(th_inner(matrices, p, p).real, 0.0)))


def compute_lambda_bounds(
    matrices: Sequence[sp.spmatrix],
    schur_matrices: Sequence[sp.spmatrix],
    *,
    max_dim: int = 2000,
) -> tuple[float, float]:
    """sqrt of the extreme eigenvalues of blockdiag(T_j) against blockdiag(Lambda_j)."""
    if len(matrices) != len(schur_matrices):
        raise InvalidArgumentError("need one Schur matrix per impedance block")
    total = sum(m.shape[0] for m in matrices)
    if total > max_dim:
        raise ResourceLimitError("multi-trace dimension for lambda bounds", total, max_dim)
    lows, highs = [], []
    for matrix, schur in zip(matrices, schur_matrices):
        low, high = dense_sym_generalized_eigs(
            sp.csr_matrix(matrix).toarray(), sp.csr_matrix(schur).toarray(), max_dim=max_dim
        )
        lows.append(low)
        highs.append(high)
    return float(np.sqrt(min(lows))), float(np.sqrt(max(highs)))
