import math
from pathlib import Path

import biofilm_fv
import numpy as np
import pytest

from biofilm_fv import (
    AdmissibilityError,
    EdgeKind,
    MeshError,
    TopologyError,
    build_interval_mesh,
    build_rectangle_mesh,
    load_triangle_mesh,
    load_triangle_mesh_file,
    read_triangle_mesh_file,
    validate_regularity,
    write_triangle_mesh_file,
)

ACUTE_FIXTURE = str(Path(biofilm_fv.__file__).parent / "data" / "acute_patch.mesh")
ALL = lambda x, y: True
TOP = lambda x, y: abs(y - 1.0) < 1e-12


# -- interval meshes ----------------------------------------------------------


def test_interval_mesh_transmissibilities():
    mesh = build_interval_mesh(10, "left")
    assert mesh.n_cells == 10
    interior = [e for e in mesh.edges if e.kind == EdgeKind.INTERIOR]
    assert len(interior) == 9
    # m(sigma) = 1 convention gives tau = 1/h on interior edges
    assert all(abs(e.transmissibility - 10.0) < 1e-12 for e in interior)
    assert abs(mesh.total_measure - 1.0) < 1e-15


def test_interval_mesh_two_cells_left():
    mesh = build_interval_mesh(2, "left")
    kinds = [e.kind for e in mesh.edges]
    assert kinds.count(EdgeKind.INTERIOR) == 1
    assert kinds.count(EdgeKind.DIRICHLET) == 1
    assert kinds.count(EdgeKind.NEUMANN) == 1
    # Dirichlet sits at x = 0
    dirichlet = mesh.edges[int(mesh.dirichlet[0])]
    assert dirichlet.cells == (0,)


def test_interval_mesh_reference_size():
    mesh = build_interval_mesh(5120, "left")
    assert mesh.n_cells == 5120
    assert mesh.n_edges == 5121


def test_interval_mesh_rejects_single_cell():
    with pytest.raises(ValueError):
        build_interval_mesh(1, "left")


def test_interval_regularity():
    # interior incidences give (h/2)/h, boundary ones give 1
    assert build_interval_mesh(10, "left").regularity_xi == pytest.approx(0.5, abs=0)


# -- rectangle meshes ----------------------------------------------------------


def test_rectangle_2x2_geometry():
    mesh = build_rectangle_mesh(2, 2, TOP)
    assert mesh.n_cells == 4
    assert mesh.interior.size == 4
    assert np.allclose(mesh.interior_tau, 1.0)  # tau = 0.5 / 0.5
    assert mesh.dirichlet.size == 2
    assert np.allclose(mesh.dirichlet_tau, 2.0)  # tau = 0.5 / 0.25
    assert mesh.neumann.size == 6


def test_rectangle_unit_partition_and_xi():
    mesh = build_rectangle_mesh(5, 3, TOP)
    assert mesh.total_measure == pytest.approx(1.0, abs=1e-15)
    assert mesh.regularity_xi == 0.5


def test_rectangle_orthogonality_exact():
    mesh = build_rectangle_mesh(3, 3, TOP)
    K, L = mesh.interior_K, mesh.interior_L
    dx = mesh.cell_centers[L] - mesh.cell_centers[K]
    normals = mesh.edge_normals[mesh.interior]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    assert np.abs(np.einsum("ij,ij->i", dx, tangents)).max() == 0.0


def test_rectangle_empty_dirichlet_rejected():
    with pytest.raises(MeshError):
        build_rectangle_mesh(3, 3, lambda x, y: False)


def test_dual_cells_partition_domain():
    mesh = build_rectangle_mesh(4, 5, TOP)
    assert mesh.edge_dual_measures.sum() == pytest.approx(mesh.total_measure, rel=1e-12)


# -- triangle meshes -------------------------------------------------------------


def equilateral_pair():
    """Rhombus of two unit equilateral triangles sharing a horizontal edge."""
    s3 = math.sqrt(3.0)
    nodes = [(0.0, 0.0), (1.0, 0.0), (0.5, s3 / 2), (0.5, -s3 / 2)]
    return nodes, [(0, 1, 2), (0, 3, 1)]


def test_right_triangles_rejected():
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    with pytest.raises(AdmissibilityError) as err:
        load_triangle_mesh(nodes, [(0, 1, 2), (0, 2, 3)], ALL)
    assert "triangle 0" in str(err.value)


def test_equilateral_pair_geometry():
    nodes, tris = equilateral_pair()
    mesh = load_triangle_mesh(nodes, tris, ALL)
    # circumcenter of a unit equilateral triangle sits 1/(2 sqrt(3)) from each edge
    d = 1.0 / (2.0 * math.sqrt(3.0))
    for edge in mesh.edges:
        for dist in edge.center_distances:
            assert dist == pytest.approx(d, rel=1e-12)
    # interior edge: d_sigma = 2 d, hence xi = 1/2 there and 1 on the boundary
    assert mesh.regularity_xi == pytest.approx(0.5, rel=1e-12)
    interior = mesh.edges[int(mesh.interior[0])]
    assert interior.distance == pytest.approx(2.0 * d, rel=1e-12)
    # kite identity for the dual cell
    assert interior.dual_measure == pytest.approx(
        interior.measure * interior.distance / 2.0, rel=1e-15
    )


def test_triangle_mesh_kite_identity_and_partition():
    mesh = load_triangle_mesh_file(ACUTE_FIXTURE, ALL)
    K, L = mesh.interior_K, mesh.interior_L
    dist = np.linalg.norm(mesh.cell_centers[L] - mesh.cell_centers[K], axis=1)
    md = mesh.edge_measures[mesh.interior] * dist
    assert np.abs(md - 2.0 * mesh.edge_dual_measures[mesh.interior]).max() <= 1e-12 * md.max()
    assert mesh.edge_dual_measures.sum() == pytest.approx(mesh.total_measure, rel=1e-12)


def test_triangle_mesh_orthogonality_invariant():
    mesh = load_triangle_mesh_file(ACUTE_FIXTURE, ALL)
    K, L = mesh.interior_K, mesh.interior_L
    dx = mesh.cell_centers[L] - mesh.cell_centers[K]
    dist = np.linalg.norm(dx, axis=1)
    normals = mesh.edge_normals[mesh.interior]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
    skew = np.abs(np.einsum("ij,ij->i", dx, tangents))
    assert (skew <= 1e-10 * dist).all()


def test_nonconforming_triangulation_rejected():
    nodes, tris = equilateral_pair()
    with pytest.raises(TopologyError):
        load_triangle_mesh(nodes, tris + [tris[0]], ALL)


def test_acute_fixture_accepted():
    mesh = load_triangle_mesh_file(ACUTE_FIXTURE, ALL)
    assert mesh.regularity_xi > 0.0
    assert validate_regularity(mesh) == mesh.regularity_xi


def test_mesh_file_round_trip(tmp_path):
    nodes, tris = read_triangle_mesh_file(ACUTE_FIXTURE)
    path = tmp_path / "patch.mesh"
    write_triangle_mesh_file(path, nodes, tris)
    nodes2, tris2 = read_triangle_mesh_file(path)
    assert np.array_equal(nodes, nodes2)
    assert np.array_equal(tris, tris2)


def test_boundary_edges_partition():
    mesh = build_rectangle_mesh(4, 4, TOP)
    boundary = mesh.dirichlet.size + mesh.neumann.size
    assert boundary == 16
    assert mesh.dirichlet.size == 4


def test_edge_moment_bound_2d():
    mesh = build_rectangle_mesh(6, 4, TOP)
    acc = sum(
        e.measure * d for e in mesh.edges for d in e.center_distances
    )
    assert acc <= 2.0 * mesh.total_measure + 1e-12
