"""Conforming 2D triangulations, MSH v2.2 ingest and subdomain partitioning.

Node, triangle and subdomain indices are 0-based in memory. The partition
owner file and the CLI use 1-based subdomain labels.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sp

from .config import get_settings
from .errors import InvalidArgumentError, MeshParseError, ResourceLimitError

LOGGER = logging.getLogger(__name__)

PartitionMethod = Literal["graph-growing", "coordinate-bisection", "onion", "from-file"]

# Radial ring spacing is target_h / RING_REFINEMENT so that the longest
# diagonal edge of the ring triangulation stays below 1.5 * target_h.
RING_REFINEMENT = 1.25
MSH_TRIANGLE = 2
MSH_LINE = 1
# Graph-growing partitions are rebalanced until max/mean - 1 is at most this.
BALANCE_TOLERANCE = 0.10


def _edge_keys(edges: np.ndarray, num_nodes: int) -> np.ndarray:
    lo = np.minimum(edges[:, 0], edges[:, 1]).astype(np.int64)
    hi = np.maximum(edges[:, 0], edges[:, 1]).astype(np.int64)
    return lo * num_nodes + hi


def compute_boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Edges used by exactly one triangle, oriented as in that triangle."""
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    directed = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    keys = _edge_keys(directed, int(triangles.max()) + 1)
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    return directed[np.sort(first[counts == 1])]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation; validated on construction."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    element_region: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=np.float64))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(
            self, "boundary_edges", np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        )
        object.__setattr__(self, "element_region", np.ascontiguousarray(self.element_region, dtype=np.int64))
        for array in (self.nodes, self.triangles, self.boundary_edges, self.element_region):
            array.setflags(write=False)
        self.validate()

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted node pairs."""
        directed = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.unique(np.sort(directed, axis=1), axis=0)

    @cached_property
    def element_adjacency(self) -> sp.csr_matrix:
        """Symmetric triangle-triangle adjacency through shared edges."""
        directed = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        owner = np.repeat(np.arange(self.num_triangles), 3)
        keys = _edge_keys(directed, self.num_nodes)
        order = np.argsort(keys, kind="stable")
        keys, owner = keys[order], owner[order]
        shared = np.nonzero(keys[1:] == keys[:-1])[0]
        rows = np.concatenate([owner[shared], owner[shared + 1]])
        cols = np.concatenate([owner[shared + 1], owner[shared]])
        data = np.ones(rows.size, dtype=np.int8)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.num_triangles,) * 2)

    def validate(self) -> None:
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise InvalidArgumentError(f"nodes must be an (n, 2) array, got {self.nodes.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or self.num_triangles == 0:
            raise InvalidArgumentError(f"triangles must be a non-empty (m, 3) array, got {self.triangles.shape}")
        if self.element_region.shape != (self.num_triangles,):
            raise InvalidArgumentError("element_region needs one tag per triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= self.num_nodes:
            raise InvalidArgumentError("triangle references a node that does not exist")
        if np.any(np.bincount(self.triangles.ravel(), minlength=self.num_nodes) == 0):
            raise InvalidArgumentError("mesh contains nodes that belong to no triangle")
        if np.any(self.signed_areas <= 0.0):
            bad = int(np.argmax(self.signed_areas <= 0.0))
            raise InvalidArgumentError(f"triangle {bad} has non-positive signed area")

        directed = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        directed_keys = directed[:, 0].astype(np.int64) * self.num_nodes + directed[:, 1]
        if np.unique(directed_keys).size != directed_keys.size:
            raise InvalidArgumentError("non-conforming mesh: an edge is traversed twice in the same direction")
        _, counts = np.unique(_edge_keys(directed, self.num_nodes), return_counts=True)
        if counts.max() > 2:
            raise InvalidArgumentError("non-conforming mesh: an edge is shared by more than two triangles")

        expected = np.sort(_edge_keys(compute_boundary_edges(self.triangles), self.num_nodes))
        stored = np.sort(_edge_keys(self.boundary_edges, self.num_nodes))
        if expected.shape != stored.shape or np.any(expected != stored):
            raise InvalidArgumentError("boundary_edges differ from the edges owned by a single triangle")

    def euler_characteristic(self) -> int:
        return self.num_nodes - int(self.edges.shape[0]) + self.num_triangles


def _orient(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    clockwise = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
    out = triangles.copy()
    out[clockwise, 1], out[clockwise, 2] = triangles[clockwise, 2], triangles[clockwise, 1]
    return out


def generate_disk_mesh(radius: float, target_h: float, *, max_nodes: Optional[int] = None) -> Mesh:
    """Concentric-ring triangulation of the disk of given radius centred at the origin.

    Ring i sits at radius i*dr and carries 6*i nodes; consecutive rings are
    stitched by merging their angular sequences.
    """
    if radius <= 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if not 0 < target_h < radius:
        raise InvalidArgumentError(f"target_h must lie in (0, radius), got {target_h}")
    rings = math.ceil(RING_REFINEMENT * radius / target_h)
    num_nodes = 1 + 3 * rings * (rings + 1)
    cap = max_nodes if max_nodes is not None else get_settings().max_mesh_nodes
    if num_nodes > cap:
        raise ResourceLimitError("disk mesh nodes", num_nodes, cap)

    nodes = [np.zeros((1, 2))]
    starts = [0]
    for i in range(1, rings + 1):
        count = 6 * i
        theta = 2.0 * np.pi * np.arange(count) / count
        r = radius * i / rings
        starts.append(starts[-1] + (1 if i == 1 else 6 * (i - 1)))
        nodes.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))

    triangles: list[tuple[int, int, int]] = []
    first = starts[1]
    for k in range(6):
        triangles.append((0, first + k, first + (k + 1) % 6))
    for i in range(2, rings + 1):
        inner, outer = starts[i - 1], starts[i]
        n_in, n_out = 6 * (i - 1), 6 * i
        a = b = 0
        while a < n_in or b < n_out:
            advance_outer = b < n_out and (a >= n_in or (b + 1) * n_in <= (a + 1) * n_out)
            if advance_outer:
                triangles.append((inner + a % n_in, outer + b % n_out, outer + (b + 1) % n_out))
                b += 1
            else:
                triangles.append((inner + a % n_in, outer + b % n_out, inner + (a + 1) % n_in))
                a += 1

    points = np.vstack(nodes)
    tri = _orient(points, np.asarray(triangles, dtype=np.int64))
    mesh = Mesh(
        nodes=points,
        triangles=tri,
        boundary_edges=compute_boundary_edges(tri),
        element_region=np.zeros(tri.shape[0], dtype=np.int64),
    )
    LOGGER.info(
        "Disk mesh R=%.4g h=%.4g: %d nodes, %d triangles, %d rings",
        radius,
        target_h,
        mesh.num_nodes,
        mesh.num_triangles,
        rings,
    )
    return mesh


@dataclass
class MshDocument:
    """Parsed MSH content: the mesh plus ingest bookkeeping."""

    mesh: Mesh
    skipped_elements: dict[int, int] = field(default_factory=dict)
    line_records: int = 0
    lines_off_boundary: int = 0


class _LineCursor:
    def __init__(self, text: str) -> None:
        self._lines = text.splitlines()
        self.position = 0

    @property
    def line_number(self) -> int:
        return self.position

    def next(self, expecting: str) -> str:
        while self.position < len(self._lines):
            line = self._lines[self.position].strip()
            self.position += 1
            if line:
                return line
        raise MeshParseError(f"unexpected end of document while reading {expecting}", self.position)

    def at_end(self) -> bool:
        while self.position < len(self._lines) and not self._lines[self.position].strip():
            self.position += 1
        return self.position >= len(self._lines)

    def expect(self, token: str) -> None:
        line = self.next(token)
        if line != token:
            raise MeshParseError(f"expected {token!r}, found {line!r}", self.line_number)

    def skip_section(self, name: str) -> None:
        end = "$End" + name[1:]
        while True:
            if self.next(end) == end:
                return


def _parse_int(token: str, cursor: _LineCursor, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MeshParseError(f"invalid {what} {token!r}", cursor.line_number) from None


def parse_msh(text: str) -> MshDocument:
    """Parse the ASCII MSH v2.2 subset: $MeshFormat, $Nodes, $Elements."""
    cursor = _LineCursor(text)
    version: Optional[str] = None
    node_coords: Optional[np.ndarray] = None
    tri_records: list[tuple[int, int, int, int]] = []
    line_records: list[tuple[int, int]] = []
    skipped: Counter[int] = Counter()

    while not cursor.at_end():
        header = cursor.next("section header")
        if not header.startswith("$"):
            raise MeshParseError(f"malformed section header {header!r}", cursor.line_number)
        if header == "$MeshFormat":
            fields = cursor.next("format line").split()
            if len(fields) < 3:
                raise MeshParseError("malformed $MeshFormat line", cursor.line_number)
            version = fields[0].strip()
            if version != "2.2":
                raise MeshParseError(f"unsupported MSH version {version}", cursor.line_number)
            if fields[1] != "0":
                raise MeshParseError("only ASCII MSH files are supported", cursor.line_number)
            cursor.expect("$EndMeshFormat")
        elif header == "$Nodes":
            if version is None:
                raise MeshParseError("$Nodes before $MeshFormat", cursor.line_number)
            count = _parse_int(cursor.next("node count"), cursor, "node count")
            node_coords = np.empty((count, 2))
            for expected_id in range(1, count + 1):
                fields = cursor.next("node record").split()
                if len(fields) < 3:
                    raise MeshParseError("malformed node record", cursor.line_number)
                node_id = _parse_int(fields[0], cursor, "node id")
                if node_id != expected_id:
                    raise MeshParseError(
                        f"non-contiguous node numbering: expected {expected_id}, got {node_id}",
                        cursor.line_number,
                    )
                try:
                    node_coords[expected_id - 1] = (float(fields[1]), float(fields[2]))
                except ValueError:
                    raise MeshParseError("invalid node coordinate", cursor.line_number) from None
            cursor.expect("$EndNodes")
        elif header == "$Elements":
            if node_coords is None:
                raise MeshParseError("$Elements before $Nodes", cursor.line_number)
            count = _parse_int(cursor.next("element count"), cursor, "element count")
            for _ in range(count):
                fields = cursor.next("element record").split()
                if len(fields) < 3:
                    raise MeshParseError("malformed element record", cursor.line_number)
                kind = _parse_int(fields[1], cursor, "element type")
                ntags = _parse_int(fields[2], cursor, "tag count")
                tags = fields[3 : 3 + ntags]
                refs = fields[3 + ntags :]
                if kind not in (MSH_TRIANGLE, MSH_LINE):
                    skipped[kind] += 1
                    continue
                arity = 3 if kind == MSH_TRIANGLE else 2
                if len(refs) != arity:
                    raise MeshParseError(f"element type {kind} needs {arity} nodes", cursor.line_number)
                ids = [_parse_int(ref, cursor, "node reference") for ref in refs]
                if min(ids) < 1 or max(ids) > node_coords.shape[0]:
                    raise MeshParseError("element references an unknown node", cursor.line_number)
                if kind == MSH_TRIANGLE:
                    region = _parse_int(tags[0], cursor, "physical tag") if tags else 0
                    tri_records.append((ids[0] - 1, ids[1] - 1, ids[2] - 1, region))
                else:
                    line_records.append((ids[0] - 1, ids[1] - 1))
            cursor.expect("$EndElements")
        else:
            cursor.skip_section(header)

    if version is None or node_coords is None:
        raise MeshParseError("document lacks $MeshFormat or $Nodes", cursor.line_number)
    if not tri_records:
        raise MeshParseError("document contains no triangle (type 2) elements", cursor.line_number)
    for kind, count in sorted(skipped.items()):
        LOGGER.warning("Skipped %d MSH elements of unsupported type %d", count, kind)

    records = np.asarray(tri_records, dtype=np.int64)
    used = np.unique(records[:, :3])
    renumber = np.full(node_coords.shape[0], -1, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    triangles = _orient(node_coords[used], renumber[records[:, :3]])
    degenerate = _zero_area(node_coords[used], triangles)
    if np.any(degenerate):
        raise MeshParseError(f"degenerate triangle (triangle {int(np.argmax(degenerate)) + 1} of the document)")
    try:
        mesh = Mesh(
            nodes=node_coords[used],
            triangles=triangles,
            boundary_edges=compute_boundary_edges(triangles),
            element_region=records[:, 3],
        )
    except InvalidArgumentError as exc:
        raise MeshParseError(str(exc)) from exc

    off_boundary = 0
    if line_records:
        lines = np.asarray(line_records, dtype=np.int64)
        valid = np.all(renumber[lines] >= 0, axis=1)
        keys = _edge_keys(renumber[lines[valid]], mesh.num_nodes)
        boundary_keys = _edge_keys(mesh.boundary_edges, mesh.num_nodes)
        off_boundary = int((~valid).sum() + (~np.isin(keys, boundary_keys)).sum())
        if off_boundary:
            LOGGER.warning("%d line elements do not lie on the mesh boundary", off_boundary)
    return MshDocument(
        mesh=mesh,
        skipped_elements=dict(skipped),
        line_records=len(line_records),
        lines_off_boundary=off_boundary,
    )


def _zero_area(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    scale = np.maximum(np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e2, e2))
    return area <= 1e-14 * scale


def read_msh(text: str) -> Mesh:
    return parse_msh(text).mesh


def write_msh(mesh: Mesh) -> str:
    """Serialize to ASCII MSH v2.2 (boundary edges as type 1, triangles as type 2)."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.num_nodes)]
    out.extend(f"{i + 1} {x!r} {y!r} 0" for i, (x, y) in enumerate(mesh.nodes.tolist()))
    out.append("$EndNodes")
    total = mesh.boundary_edges.shape[0] + mesh.num_triangles
    out.extend(["$Elements", str(total)])
    element_id = 1
    for a, b in mesh.boundary_edges.tolist():
        out.append(f"{element_id} {MSH_LINE} 2 1 1 {a + 1} {b + 1}")
        element_id += 1
    for (a, b, c), region in zip(mesh.triangles.tolist(), mesh.element_region.tolist()):
        out.append(f"{element_id} {MSH_TRIANGLE} 2 {region} {region} {a + 1} {b + 1} {c + 1}")
        element_id += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


@dataclass(frozen=True, eq=False)
class Partition:
    """Element-to-subdomain ownership (0-based subdomain labels)."""

    num_subdomains: int
    element_owner: np.ndarray

    def __post_init__(self) -> None:
        owner = np.ascontiguousarray(self.element_owner, dtype=np.int64)
        owner.setflags(write=False)
        object.__setattr__(self, "element_owner", owner)
        if self.num_subdomains < 1:
            raise InvalidArgumentError(f"num_subdomains must be >= 1, got {self.num_subdomains}")
        if owner.ndim != 1 or owner.size == 0:
            raise InvalidArgumentError("element_owner must be a non-empty 1D array")
        if owner.min() < 0 or owner.max() >= self.num_subdomains:
            raise InvalidArgumentError("element_owner holds labels outside [0, J)")
        empty = np.nonzero(self.element_counts == 0)[0]
        if empty.size:
            raise InvalidArgumentError(f"subdomain {int(empty[0]) + 1} owns no triangle")

    @cached_property
    def element_counts(self) -> np.ndarray:
        return np.bincount(self.element_owner, minlength=self.num_subdomains)

    def elements(self, j: int) -> np.ndarray:
        return np.nonzero(self.element_owner == j)[0]

    @property
    def imbalance(self) -> float:
        counts = self.element_counts
        return float(counts.max() / counts.mean() - 1.0)


@dataclass(frozen=True)
class CrossPointReport:
    interior_cross_points: tuple[int, ...]
    boundary_cross_points: tuple[int, ...]

    @property
    def is_empty(self) -> bool:
        return not self.interior_cross_points and not self.boundary_cross_points


@dataclass(frozen=True, eq=False)
class SubdomainTopology:
    """Derived numbering of one subdomain: volume DOFs, boundary DOFs, edges of Gamma_j."""

    index: int
    elements: np.ndarray
    volume_nodes: np.ndarray
    boundary_nodes: np.ndarray
    boundary_edges: np.ndarray
    robin_edges: np.ndarray

    @property
    def num_volume_dofs(self) -> int:
        return int(self.volume_nodes.size)

    @property
    def num_boundary_dofs(self) -> int:
        return int(self.boundary_nodes.size)

    @cached_property
    def interior_local(self) -> np.ndarray:
        """Local volume indices not on Gamma_j."""
        mask = np.ones(self.volume_nodes.size, dtype=bool)
        mask[self.boundary_local] = False
        return np.nonzero(mask)[0]

    @cached_property
    def boundary_local(self) -> np.ndarray:
        """Local volume index of each boundary DOF (the column of the 1 in row k of B_j)."""
        return np.searchsorted(self.volume_nodes, self.boundary_nodes)


def subdomain_topology(mesh: Mesh, partition: Partition, j: int) -> SubdomainTopology:
    if not 0 <= j < partition.num_subdomains:
        raise InvalidArgumentError(f"subdomain index {j} outside [0, {partition.num_subdomains})")
    elements = partition.elements(j)
    if elements.size == 0:
        raise InvalidArgumentError(f"subdomain {j + 1} owns no triangle")
    triangles = mesh.triangles[elements]
    boundary = compute_boundary_edges(triangles)
    on_physical = np.isin(
        _edge_keys(boundary, mesh.num_nodes),
        _edge_keys(mesh.boundary_edges, mesh.num_nodes),
    )
    return SubdomainTopology(
        index=j,
        elements=elements,
        volume_nodes=np.unique(triangles),
        boundary_nodes=np.unique(boundary),
        boundary_edges=boundary,
        robin_edges=boundary[on_physical],
    )


def build_subdomains(mesh: Mesh, partition: Partition) -> list[SubdomainTopology]:
    return [subdomain_topology(mesh, partition, j) for j in range(partition.num_subdomains)]


def _spread_seeds(centroids: np.ndarray, count: int, rng: np.random.Generator) -> list[int]:
    start = int(rng.integers(centroids.shape[0]))
    distance = np.linalg.norm(centroids - centroids[start], axis=1)
    seeds = [int(np.argmax(distance))]
    distance = np.linalg.norm(centroids - centroids[seeds[0]], axis=1)
    while len(seeds) < count:
        candidate = int(np.argmax(distance))
        seeds.append(candidate)
        distance = np.minimum(distance, np.linalg.norm(centroids - centroids[candidate], axis=1))
    return seeds


def _node_incidence(mesh: Mesh) -> sp.csr_matrix:
    rows = mesh.triangles.ravel()
    cols = np.repeat(np.arange(mesh.num_triangles), 3)
    data = np.ones(rows.size, dtype=np.int8)
    return sp.csr_matrix((data, (rows, cols)), shape=(mesh.num_nodes, mesh.num_triangles))


def _can_release(mesh: Mesh, incidence: sp.csr_matrix, owner: np.ndarray, element: int) -> bool:
    """True when removing ``element`` leaves its part connected.

    Sufficient local test: the same-part edge neighbours of ``element`` must be
    linked through the other same-part triangles around its three vertices.
    """
    adjacency = mesh.element_adjacency
    part = owner[element]
    neighbours = adjacency.indices[adjacency.indptr[element] : adjacency.indptr[element + 1]]
    same = neighbours[owner[neighbours] == part]
    if same.size <= 1:
        return same.size == 1 or np.count_nonzero(owner == part) > 1
    around = np.unique(incidence[mesh.triangles[element]].indices)
    patch = set(around[(owner[around] == part) & (around != element)].tolist())
    reached = {int(same[0])}
    queue = deque(reached)
    while queue:
        current = queue.popleft()
        for n in adjacency.indices[adjacency.indptr[current] : adjacency.indptr[current + 1]]:
            n = int(n)
            if n in patch and n not in reached:
                reached.add(n)
                queue.append(n)
    return all(int(s) in reached for s in same)


def _release_candidate(
    mesh: Mesh, incidence: sp.csr_matrix, owner: np.ndarray, source: int, target: int
) -> Optional[int]:
    in_target = (owner == target).astype(np.int64)
    touching = mesh.element_adjacency @ in_target
    candidates = np.nonzero((owner == source) & (touching > 0))[0]
    if candidates.size == 0:
        return None
    centre = mesh.centroids[in_target.astype(bool)].mean(axis=0)
    distance = np.linalg.norm(mesh.centroids[candidates] - centre, axis=1)
    order = np.lexsort((candidates, distance, -touching[candidates]))
    for element in candidates[order]:
        if _can_release(mesh, incidence, owner, int(element)):
            return int(element)
    return None


def _part_path(
    quotient: dict[int, set[int]], counts: np.ndarray, source: int, cap: int, blocked: set[tuple[int, int]]
) -> list[int]:
    """Shortest chain of touching parts from ``source`` to a part below ``cap``."""
    previous = {source: source}
    queue = deque([source])
    while queue:
        current = queue.popleft()
        for nxt in sorted(quotient[current]):
            if nxt in previous or (current, nxt) in blocked:
                continue
            previous[nxt] = current
            if counts[nxt] < cap:
                path = [nxt]
                while path[-1] != source:
                    path.append(previous[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return []


def _rebalance(mesh: Mesh, owner: np.ndarray, parts: int, tolerance: float = BALANCE_TOLERANCE) -> np.ndarray:
    """Shift boundary elements along chains of touching parts until max/mean - 1 <= tolerance.

    Each move hands one element to an adjacent part and keeps the donor
    connected, so parts grown connected stay connected.
    """
    counts = np.bincount(owner, minlength=parts)
    mean = mesh.num_triangles / parts
    cap = max(math.ceil(mean), math.floor((1.0 + tolerance) * mean + 1e-9))
    incidence = _node_incidence(mesh)
    adjacency = mesh.element_adjacency.tocoo()
    blocked: set[tuple[int, int]] = set()
    moves = 0

    while counts.max() > cap:
        quotient: dict[int, set[int]] = {p: set() for p in range(parts)}
        a, b = owner[adjacency.row], owner[adjacency.col]
        for p, q in set(zip(a[a != b].tolist(), b[a != b].tolist())):
            quotient[p].add(q)
        path: list[int] = []
        for source in np.argsort(-counts, kind="stable"):
            if counts[source] <= cap:
                break
            path = _part_path(quotient, counts, int(source), cap, blocked)
            if path:
                break
        if not path:
            LOGGER.warning(
                "Graph-growing rebalance stalled at imbalance %.1f%% after %d moves",
                100.0 * (counts.max() / mean - 1.0),
                moves,
            )
            break
        # Walk back from the receiving end so every intermediate part keeps its size.
        completed = True
        for giver, taker in reversed(list(zip(path[:-1], path[1:]))):
            element = _release_candidate(mesh, incidence, owner, giver, taker)
            if element is None:
                blocked.add((giver, taker))
                completed = False
                break
            owner[element] = taker
            counts[giver] -= 1
            counts[taker] += 1
            moves += 1
        if completed:
            blocked.clear()

    LOGGER.debug("Graph-growing rebalance: %d moves, counts %s", moves, counts.tolist())
    return owner


def _graph_growing(mesh: Mesh, parts: int, seed: int) -> np.ndarray:
    adjacency = mesh.element_adjacency
    owner = np.full(mesh.num_triangles, -1, dtype=np.int64)
    seeds = _spread_seeds(mesh.centroids, parts, np.random.default_rng(seed))
    frontiers: list[deque[int]] = []
    sizes = [1] * parts
    for p, s in enumerate(seeds):
        owner[s] = p
        frontiers.append(deque(adjacency.indices[adjacency.indptr[s] : adjacency.indptr[s + 1]].tolist()))
    heap = [(1, p) for p in range(parts)]
    heapq.heapify(heap)
    remaining = mesh.num_triangles - parts

    while remaining and heap:
        _, p = heapq.heappop(heap)
        frontier = frontiers[p]
        while frontier and owner[frontier[0]] >= 0:
            frontier.popleft()
        if not frontier:
            continue
        element = frontier.popleft()
        owner[element] = p
        sizes[p] += 1
        remaining -= 1
        neighbours = adjacency.indices[adjacency.indptr[element] : adjacency.indptr[element + 1]]
        frontier.extend(int(n) for n in neighbours if owner[n] < 0)
        heapq.heappush(heap, (sizes[p], p))

    # Elements unreachable from any seed inherit an assigned neighbour's owner.
    while remaining:
        progressed = False
        for element in np.nonzero(owner < 0)[0]:
            neighbours = adjacency.indices[adjacency.indptr[element] : adjacency.indptr[element + 1]]
            owned = owner[neighbours][owner[neighbours] >= 0]
            if owned.size:
                owner[element] = int(owned.min())
                remaining -= 1
                progressed = True
        if not progressed:
            smallest = int(np.argmin(np.bincount(owner[owner >= 0], minlength=parts)))
            owner[owner < 0] = smallest
            remaining = 0
    return _rebalance(mesh, owner, parts)


def _coordinate_bisection(mesh: Mesh, parts: int) -> np.ndarray:
    owner = np.empty(mesh.num_triangles, dtype=np.int64)
    centroids = mesh.centroids
    stack = [(np.arange(mesh.num_triangles), parts, 0)]
    while stack:
        indices, count, offset = stack.pop()
        if count == 1:
            owner[indices] = offset
            continue
        left = count // 2
        points = centroids[indices]
        axis = int(np.argmax(np.ptp(points, axis=0)))
        order = indices[np.argsort(points[:, axis], kind="stable")]
        cut = int(round(order.size * left / count))
        stack.append((order[cut:], count - left, offset + left))
        stack.append((order[:cut], left, offset))
    return owner


def _onion(mesh: Mesh, parts: int) -> np.ndarray:
    node_radius = np.linalg.norm(mesh.nodes, axis=1)
    outer = node_radius.max()
    levels = np.unique(np.round(node_radius / outer, 9)) * outer
    levels = levels[(levels > 0) & (levels < outer)]
    if levels.size < parts - 1:
        raise InvalidArgumentError(f"mesh is too coarse for an onion partition with J={parts}")
    thresholds = []
    for k in range(1, parts):
        target = outer * math.sqrt(k / parts)
        thresholds.append(float(levels[np.argmin(np.abs(levels - target))]))
    thresholds_arr = np.asarray(thresholds)
    if np.any(np.diff(thresholds_arr) <= 0):
        raise InvalidArgumentError(f"mesh is too coarse for an onion partition with J={parts}")
    centroid_radius = np.linalg.norm(mesh.centroids, axis=1)
    return np.searchsorted(thresholds_arr, centroid_radius).astype(np.int64)


def read_partition_file(text: str, num_triangles: int) -> Partition:
    """Owner file: line i holds the 1-based subdomain of triangle i."""
    owners: list[int] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            value = int(stripped)
        except ValueError:
            raise MeshParseError(f"invalid owner {stripped!r}", number) from None
        if value < 1:
            raise MeshParseError(f"owner labels are 1-based, got {value}", number)
        owners.append(value - 1)
    if len(owners) != num_triangles:
        raise MeshParseError(f"owner file lists {len(owners)} triangles, mesh has {num_triangles}")
    owner = np.asarray(owners, dtype=np.int64)
    return Partition(num_subdomains=int(owner.max()) + 1, element_owner=owner)


def write_partition_file(partition: Partition) -> str:
    return "".join(f"{owner + 1}\n" for owner in partition.element_owner.tolist())


def partition_mesh(
    mesh: Mesh,
    num_subdomains: int,
    method: PartitionMethod = "graph-growing",
    *,
    seed: int = 0,
    owner_file: Optional[Path | str] = None,
) -> Partition:
    if num_subdomains < 1:
        raise InvalidArgumentError(f"J must be >= 1, got {num_subdomains}")
    if num_subdomains > mesh.num_triangles:
        raise InvalidArgumentError(
            f"J={num_subdomains} exceeds the number of triangles ({mesh.num_triangles})"
        )
    if method == "from-file":
        if owner_file is None:
            raise InvalidArgumentError("method 'from-file' needs an owner file")
        partition = read_partition_file(Path(owner_file).read_text(encoding="utf-8"), mesh.num_triangles)
        if partition.num_subdomains != num_subdomains:
            raise InvalidArgumentError(
                f"owner file defines {partition.num_subdomains} subdomains, J={num_subdomains} requested"
            )
        return partition

    if num_subdomains == 1:
        owner = np.zeros(mesh.num_triangles, dtype=np.int64)
    elif method == "graph-growing":
        owner = _graph_growing(mesh, num_subdomains, seed)
    elif method == "coordinate-bisection":
        owner = _coordinate_bisection(mesh, num_subdomains)
    elif method == "onion":
        owner = _onion(mesh, num_subdomains)
    else:
        raise InvalidArgumentError(f"unknown partition method {method!r}")

    partition = Partition(num_subdomains=num_subdomains, element_owner=owner)
    LOGGER.info(
        "Partition %s J=%d: element counts %s (imbalance %.1f%%)",
        method,
        num_subdomains,
        partition.element_counts.tolist(),
        100.0 * partition.imbalance,
    )
    return partition


def detect_cross_points(mesh: Mesh, partition: Partition) -> CrossPointReport:
    corner_owner = np.repeat(partition.element_owner, 3)
    pairs = np.unique(mesh.triangles.ravel() * partition.num_subdomains + corner_owner)
    owners_per_node = np.bincount(pairs // partition.num_subdomains, minlength=mesh.num_nodes)
    interior = np.nonzero(owners_per_node >= 3)[0]
    on_boundary = mesh.boundary_nodes
    boundary = on_boundary[owners_per_node[on_boundary] >= 2]
    return CrossPointReport(
        interior_cross_points=tuple(int(n) for n in interior),
        boundary_cross_points=tuple(int(n) for n in boundary),
    )
