import math

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from helmddm.core.errors import InvalidArgumentError, MeshParseError, ResourceLimitError
from helmddm.core.mesh import (
    BALANCE_TOLERANCE,
    Mesh,
    Partition,
    build_subdomains,
    compute_boundary_edges,
    detect_cross_points,
    generate_disk_mesh,
    parse_msh,
    partition_mesh,
    read_msh,
    read_partition_file,
    write_msh,
    write_partition_file,
)

SQUARE_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
5
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
5 2 2 0
$EndNodes
$Elements
5
1 15 2 0 1 1
2 1 2 1 1 1 2
3 1 2 1 1 1 3
4 2 2 7 7 1 2 3
5 2 2 7 7 1 4 3
$EndElements
"""


def _square(triangles, boundary=None):
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    triangles = np.asarray(triangles)
    if boundary is None:
        boundary = compute_boundary_edges(triangles)
    return Mesh(nodes=nodes, triangles=triangles, boundary_edges=boundary, element_region=np.zeros(len(triangles)))


def test_disk_mesh_counts_and_topology():
    radius, h = 1.0, 0.3
    mesh = generate_disk_mesh(radius, h)
    rings = math.ceil(1.25 * radius / h)

    assert mesh.num_nodes == 1 + 3 * rings * (rings + 1)
    assert mesh.num_triangles == 6 * rings**2
    assert mesh.boundary_edges.shape == (6 * rings, 2)
    assert mesh.euler_characteristic() == 1
    assert np.all(mesh.signed_areas > 0)
    np.testing.assert_allclose(np.linalg.norm(mesh.nodes[mesh.boundary_nodes], axis=1), radius)


def test_disk_mesh_covers_inscribed_polygon():
    mesh = generate_disk_mesh(2.0, 0.5)
    sides = mesh.boundary_edges.shape[0]
    polygon = 0.5 * sides * math.sin(2.0 * math.pi / sides) * 4.0
    assert mesh.signed_areas.sum() == pytest.approx(polygon, rel=1e-12)


def test_disk_mesh_edge_lengths_follow_target():
    h = 0.2
    mesh = generate_disk_mesh(1.0, h)
    lengths = np.linalg.norm(mesh.nodes[mesh.edges[:, 1]] - mesh.nodes[mesh.edges[:, 0]], axis=1)
    assert lengths.max() <= 1.5 * h


def test_boundary_edges_are_counter_clockwise():
    mesh = generate_disk_mesh(1.0, 0.4)
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    assert np.all(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] > 0)


def test_disk_mesh_node_cap():
    with pytest.raises(ResourceLimitError):
        generate_disk_mesh(1.0, 0.01, max_nodes=1000)


@pytest.mark.parametrize("radius,h", [(0.0, 0.1), (1.0, 0.0), (1.0, 1.5)])
def test_disk_mesh_rejects_bad_arguments(radius, h):
    with pytest.raises(InvalidArgumentError):
        generate_disk_mesh(radius, h)


def test_mesh_rejects_clockwise_triangle():
    with pytest.raises(InvalidArgumentError, match="signed area"):
        _square([[0, 1, 2], [0, 3, 2]])


def test_mesh_rejects_unused_node():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    tri = np.array([[0, 1, 2]])
    with pytest.raises(InvalidArgumentError, match="no triangle"):
        Mesh(nodes=nodes, triangles=tri, boundary_edges=compute_boundary_edges(tri), element_region=[0])


def test_mesh_rejects_inconsistent_boundary():
    with pytest.raises(InvalidArgumentError, match="boundary_edges"):
        _square([[0, 1, 2], [0, 2, 3]], boundary=np.array([[0, 1], [1, 2]]))


def test_parse_msh_reports_skipped_and_off_boundary_elements():
    document = parse_msh(SQUARE_MSH)
    mesh = document.mesh

    assert mesh.num_nodes == 4
    assert mesh.num_triangles == 2
    assert np.all(mesh.signed_areas > 0)
    assert mesh.element_region.tolist() == [7, 7]
    assert document.skipped_elements == {15: 1}
    assert document.line_records == 2
    assert document.lines_off_boundary == 1
    assert mesh.boundary_edges.shape[0] == 4


def test_msh_writer_output_is_readable():
    mesh = generate_disk_mesh(1.0, 0.5)
    again = read_msh(write_msh(mesh))
    np.testing.assert_array_equal(again.nodes, mesh.nodes)
    np.testing.assert_array_equal(again.triangles, mesh.triangles)


@pytest.mark.parametrize(
    "text,message",
    [
        (SQUARE_MSH.replace("2.2 0 8", "4.1 0 8"), "unsupported MSH version"),
        (SQUARE_MSH.replace("2.2 0 8", "2.1 0 8"), "unsupported MSH version 2.1"),
        (SQUARE_MSH.replace("2.2 0 8", "2.0 0 8"), "unsupported MSH version 2.0"),
        (SQUARE_MSH.replace("2.2 0 8", "2.2 1 8"), "ASCII"),
        (SQUARE_MSH.replace("3 1 1 0", "9 1 1 0"), "non-contiguous"),
        (SQUARE_MSH.replace("5 2 2 7 7 1 4 3", "5 2 2 7 7 1 4 9"), "unknown node"),
        (SQUARE_MSH.replace("$EndElements\n", ""), "end of document"),
    ],
)
def test_parse_msh_errors(text, message):
    with pytest.raises(MeshParseError, match=message):
        parse_msh(text)


def test_parse_msh_error_carries_line():
    with pytest.raises(MeshParseError) as info:
        parse_msh(SQUARE_MSH.replace("3 1 1 0", "9 1 1 0"))
    assert info.value.line is not None


def test_parse_msh_rejects_degenerate_triangle():
    text = SQUARE_MSH.replace("3 1 1 0", "3 2 0 0")
    with pytest.raises(MeshParseError, match="degenerate"):
        parse_msh(text)


@pytest.mark.parametrize("method", ["graph-growing", "coordinate-bisection", "onion"])
def test_partition_methods_cover_every_subdomain(small_disk, method):
    partition = partition_mesh(small_disk, 3, method)
    assert partition.num_subdomains == 3
    assert np.all(partition.element_counts > 0)
    assert partition.element_counts.sum() == small_disk.num_triangles


def _parts_connected(mesh, partition):
    adjacency = mesh.element_adjacency
    for j in range(partition.num_subdomains):
        elements = partition.elements(j)
        count, _ = connected_components(adjacency[elements][:, elements], directed=False)
        if count != 1:
            return False
    return True


@pytest.mark.parametrize("kappa,n_lambda", [(1.0, 25.0), (5.0, 20.0)])
@pytest.mark.parametrize("parts", [3, 7, 10, 16])
def test_graph_growing_balances_within_ten_percent(make_disk, kappa, n_lambda, parts):
    mesh = make_disk(kappa, n_lambda)
    for seed in (0, 1):
        partition = partition_mesh(mesh, parts, "graph-growing", seed=seed)
        assert partition.imbalance <= BALANCE_TOLERANCE + 1e-12
        assert _parts_connected(mesh, partition)


def test_graph_growing_is_deterministic(small_disk):
    first = partition_mesh(small_disk, 4, "graph-growing", seed=3)
    second = partition_mesh(small_disk, 4, "graph-growing", seed=3)
    np.testing.assert_array_equal(first.element_owner, second.element_owner)
    assert first.imbalance <= BALANCE_TOLERANCE


@pytest.mark.slow
def test_graph_growing_balances_a_fine_disk(make_disk):
    mesh = make_disk(10.0, 25.0)
    partition = partition_mesh(mesh, 16, "graph-growing", seed=1)
    assert partition.imbalance <= BALANCE_TOLERANCE + 1e-12
    assert _parts_connected(mesh, partition)


def test_coordinate_bisection_balances_counts(small_disk):
    partition = partition_mesh(small_disk, 4, "coordinate-bisection")
    assert partition.element_counts.max() - partition.element_counts.min() <= 2


def test_onion_partition_has_no_cross_points(small_disk, onion2, onion3):
    assert detect_cross_points(small_disk, onion2).is_empty
    assert detect_cross_points(small_disk, onion3).is_empty


def test_four_way_partition_has_interior_cross_points(small_disk, four_way):
    report = detect_cross_points(small_disk, four_way)
    assert report.interior_cross_points
    assert report.boundary_cross_points


def test_single_subdomain_has_no_cross_points(small_disk):
    partition = partition_mesh(small_disk, 1)
    assert detect_cross_points(small_disk, partition).is_empty


def test_partition_file_roundtrip_and_mismatch(small_disk, four_way, tmp_path):
    path = tmp_path / "owners.txt"
    path.write_text(write_partition_file(four_way))
    loaded = partition_mesh(small_disk, 4, "from-file", owner_file=path)
    np.testing.assert_array_equal(loaded.element_owner, four_way.element_owner)
    with pytest.raises(InvalidArgumentError, match="4 subdomains"):
        partition_mesh(small_disk, 3, "from-file", owner_file=path)


def test_partition_file_is_one_based():
    with pytest.raises(MeshParseError, match="1-based"):
        read_partition_file("1\n0\n", 2)
    with pytest.raises(MeshParseError, match="lists 1 triangles"):
        read_partition_file("1\n", 2)


def test_partition_rejects_empty_subdomain():
    with pytest.raises(InvalidArgumentError, match="subdomain 2"):
        Partition(num_subdomains=3, element_owner=np.array([0, 2, 2]))


def test_partition_rejects_too_many_subdomains(tiny_disk):
    with pytest.raises(InvalidArgumentError):
        partition_mesh(tiny_disk, tiny_disk.num_triangles + 1)


def test_subdomain_topologies_split_the_physical_boundary(small_disk, four_way):
    topologies = build_subdomains(small_disk, four_way)
    robin = sum(t.robin_edges.shape[0] for t in topologies)
    assert robin == small_disk.boundary_edges.shape[0]
    for topology in topologies:
        assert np.all(np.isin(topology.boundary_nodes, topology.volume_nodes))
        np.testing.assert_array_equal(
            topology.volume_nodes[topology.boundary_local], topology.boundary_nodes
        )
        assert topology.interior_local.size + topology.num_boundary_dofs == topology.num_volume_dofs
