"""Skeleton numbering, the injections Q_j, multi-trace vectors and the classical swap."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, PreconditionError
from .mesh import Mesh, Partition, SubdomainTopology, build_subdomains

LOGGER = logging.getLogger(__name__)

Scalar = Union[int, float, complex]


@dataclass(frozen=True, eq=False)
class SkeletonMap:
    """Skeleton DOFs are the mesh nodes of Sigma, in global node order.

    ``local_to_skeleton[j][k]`` is the skeleton DOF of local boundary DOF k
    of subdomain j.
    """

    num_nodes: int
    sigma_nodes: np.ndarray
    local_to_skeleton: tuple[np.ndarray, ...]
    on_physical_boundary: np.ndarray

    @property
    def num_subdomains(self) -> int:
        return len(self.local_to_skeleton)

    @property
    def n_sigma(self) -> int:
        return int(self.sigma_nodes.size)

    @cached_property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(int(block.size) for block in self.local_to_skeleton)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(np.int64)

    @property
    def multi_trace_dim(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def concatenated_index(self) -> np.ndarray:
        """Skeleton DOF of every multi-trace coordinate, blocks concatenated."""
        return np.concatenate(self.local_to_skeleton)

    @cached_property
    def Q(self) -> tuple[sp.csr_matrix, ...]:
        matrices = []
        for local in self.local_to_skeleton:
            rows = np.arange(local.size)
            matrices.append(
                sp.csr_matrix((np.ones(local.size), (rows, local)), shape=(local.size, self.n_sigma))
            )
        return tuple(matrices)

    @cached_property
    def multiplicity(self) -> np.ndarray:
        return np.bincount(self.concatenated_index, minlength=self.n_sigma)

    def s(self, k: int, j: int) -> Optional[int]:
        """Local boundary DOF of subdomain j carrying skeleton DOF k, or None."""
        local = self.local_to_skeleton[j]
        pos = int(np.searchsorted(local, k))
        if pos < local.size and local[pos] == k:
            return pos
        return None

    def images(self, k: int) -> list[tuple[int, int]]:
        found = []
        for j in range(self.num_subdomains):
            local = self.s(k, j)
            if local is not None:
                found.append((j, local))
        return found

    def skeleton_dof(self, node: int) -> Optional[int]:
        pos = int(np.searchsorted(self.sigma_nodes, node))
        if pos < self.n_sigma and self.sigma_nodes[pos] == node:
            return pos
        return None


def build_skeleton_map(
    mesh: Mesh,
    partition: Partition,
    topologies: Optional[Sequence[SubdomainTopology]] = None,
) -> SkeletonMap:
    topologies = topologies if topologies is not None else build_subdomains(mesh, partition)
    sigma_nodes = np.unique(np.concatenate([t.boundary_nodes for t in topologies]))
    # Boundary nodes of each subdomain are sorted, so the local order is increasing in k too.
    local_to_skeleton = tuple(np.searchsorted(sigma_nodes, t.boundary_nodes) for t in topologies)
    on_boundary = np.isin(sigma_nodes, mesh.boundary_nodes)
    for array in (sigma_nodes, on_boundary, *local_to_skeleton):
        array.setflags(write=False)
    skeleton = SkeletonMap(
        num_nodes=mesh.num_nodes,
        sigma_nodes=sigma_nodes,
        local_to_skeleton=local_to_skeleton,
        on_physical_boundary=on_boundary,
    )
    LOGGER.info(
        "Skeleton: N_sigma=%d, multi-trace dimension %d, max multiplicity %d",
        skeleton.n_sigma,
        skeleton.multi_trace_dim,
        int(skeleton.multiplicity.max()),
    )
    return skeleton


def _check_length(vector: np.ndarray, expected: int, what: str) -> np.ndarray:
    vector = np.asarray(vector)
    if vector.shape != (expected,):
        raise InvalidArgumentError(f"{what} has shape {vector.shape}, expected ({expected},)")
    return vector


def restrict(skeleton: SkeletonMap, j: int, v: np.ndarray) -> np.ndarray:
    """Q_j v."""
    v = _check_length(v, skeleton.n_sigma, "skeleton vector")
    return v[skeleton.local_to_skeleton[j]]


def inject_adjoint(skeleton: SkeletonMap, j: int, w: np.ndarray) -> np.ndarray:
    """Q_j^* w."""
    local = skeleton.local_to_skeleton[j]
    w = _check_length(w, local.size, f"boundary vector of subdomain {j + 1}")
    out = np.zeros(skeleton.n_sigma, dtype=np.result_type(w.dtype, np.float64))
    out[local] = w
    return out


@dataclass(frozen=True, eq=False)
class MultiTrace:
    """An element of V_h(Gamma_1) x ... x V_h(Gamma_J), stored as one concatenated vector."""

    data: np.ndarray
    offsets: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.complex128))
        if self.data.shape != (int(self.offsets[-1]),):
            raise InvalidArgumentError(
                f"multi-trace data has shape {self.data.shape}, blocks need {int(self.offsets[-1])}"
            )

    @classmethod
    def zeros(cls, skeleton: SkeletonMap) -> "MultiTrace":
        return cls(np.zeros(skeleton.multi_trace_dim, dtype=np.complex128), skeleton.offsets)

    @classmethod
    def from_blocks(cls, skeleton: SkeletonMap, blocks: Sequence[np.ndarray]) -> "MultiTrace":
        if len(blocks) != skeleton.num_subdomains:
            raise InvalidArgumentError(f"expected {skeleton.num_subdomains} blocks, got {len(blocks)}")
        for j, (block, size) in enumerate(zip(blocks, skeleton.block_sizes)):
            _check_length(block, size, f"block {j + 1}")
        return cls(np.concatenate([np.asarray(b, dtype=np.complex128) for b in blocks]), skeleton.offsets)

    @classmethod
    def random(cls, skeleton: SkeletonMap, rng: np.random.Generator) -> "MultiTrace":
        n = skeleton.multi_trace_dim
        return cls(rng.standard_normal(n) + 1j * rng.standard_normal(n), skeleton.offsets)

    @property
    def num_blocks(self) -> int:
        return int(self.offsets.size - 1)

    def block(self, j: int) -> np.ndarray:
        return self.data[self.offsets[j] : self.offsets[j + 1]]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(j) for j in range(self.num_blocks)]

    def like(self, data: np.ndarray) -> "MultiTrace":
        return MultiTrace(data, self.offsets)

    def copy(self) -> "MultiTrace":
        return self.like(self.data.copy())

    def _other(self, other: "MultiTrace") -> np.ndarray:
        if not isinstance(other, MultiTrace):
            return NotImplemented
        if other.offsets.shape != self.offsets.shape or np.any(other.offsets != self.offsets):
            raise InvalidArgumentError("multi-traces have different block layouts")
        return other.data

    def __add__(self, other: "MultiTrace") -> "MultiTrace":
        data = self._other(other)
        if data is NotImplemented:
            return NotImplemented
        return self.like(self.data + data)

    def __sub__(self, other: "MultiTrace") -> "MultiTrace":
        data = self._other(other)
        if data is NotImplemented:
            return NotImplemented
        return self.like(self.data - data)

    def __neg__(self) -> "MultiTrace":
        return self.like(-self.data)

    def __mul__(self, scalar: Scalar) -> "MultiTrace":
        if not np.isscalar(scalar):
            return NotImplemented
        return self.like(self.data * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: Scalar) -> "MultiTrace":
        if not np.isscalar(scalar):
            return NotImplemented
        return self.like(self.data / scalar)


def lift_single_trace(skeleton: SkeletonMap, v: np.ndarray) -> MultiTrace:
    """(Q_1 v, ..., Q_J v): the multi-trace of a function on Sigma."""
    v = _check_length(v, skeleton.n_sigma, "skeleton vector")
    return MultiTrace(v[skeleton.concatenated_index], skeleton.offsets)


def single_trace_jump(skeleton: SkeletonMap, w: MultiTrace) -> float:
    """Largest deviation between images of one skeleton DOF."""
    index = skeleton.concatenated_index
    counts = skeleton.multiplicity
    mean = (
        np.bincount(index, weights=w.data.real, minlength=skeleton.n_sigma)
        + 1j * np.bincount(index, weights=w.data.imag, minlength=skeleton.n_sigma)
    ) / counts
    if w.data.size == 0:
        return 0.0
    return float(np.abs(w.data - mean[index]).max())


def is_single_trace(skeleton: SkeletonMap, w: MultiTrace, *, rtol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.abs(w.data).max())) if w.data.size else 1.0
    return single_trace_jump(skeleton, w) <= rtol * scale


@dataclass(frozen=True, eq=False)
class InterfacePairing:
    """Permutation of multi-trace coordinates swapping interface twins."""

    permutation: np.ndarray


def build_interface_pairing(skeleton: SkeletonMap) -> InterfacePairing:
    """Pair each interface DOF with its twin; valid only without cross-points."""
    counts = skeleton.multiplicity
    if np.any(counts >= 3):
        raise PreconditionError("swap operator undefined: partition has interior cross-points")
    if np.any((counts >= 2) & skeleton.on_physical_boundary):
        raise PreconditionError("swap operator undefined: partition has boundary cross-points")
    order = np.argsort(skeleton.concatenated_index, kind="stable")
    grouped = skeleton.concatenated_index[order]
    permutation = np.arange(skeleton.multi_trace_dim)
    starts = np.nonzero(np.diff(np.concatenate([[-1], grouped])))[0]
    sizes = np.diff(np.concatenate([starts, [grouped.size]]))
    twins = starts[sizes == 2]
    first, second = order[twins], order[twins + 1]
    permutation[first] = second
    permutation[second] = first
    permutation.setflags(write=False)
    return InterfacePairing(permutation=permutation)


def swap_apply(skeleton: SkeletonMap, pairing: InterfacePairing, w: MultiTrace) -> MultiTrace:
    """Classical exchange X: v_j = w_k on Gamma_j n Gamma_k, v_j = w_j on dOmega."""
    if w.data.size != pairing.permutation.size:
        raise InvalidArgumentError("multi-trace does not match the interface pairing")
    return w.like(w.data[pairing.permutation])
