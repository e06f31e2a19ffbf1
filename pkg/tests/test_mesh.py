import numpy as np
import pytest

from bimatern.mesh import (
    LocationOutsideMesh,
    MeshError,
    TriMesh,
    assemble_fem,
    make_rect_mesh,
    projector,
)


def test_rect_mesh_2x2():
    m = make_rect_mesh((0, 1), (0, 1), 2, 2)
    assert m.n_vertices == 4
    assert m.n_triangles == 2


def test_rect_mesh_3x3():
    m = make_rect_mesh((0, 1), (0, 1), 3, 3)
    assert m.n_vertices == 9
    assert m.n_triangles == 8


def test_rect_mesh_area():
    m = make_rect_mesh((0, 2), (0, 1), 3, 2)
    assert m.area() == pytest.approx(2.0, abs=1e-12)


def test_rect_mesh_degenerate_range():
    with pytest.raises(MeshError):
        make_rect_mesh((0, 0), (0, 1), 2, 2)
    with pytest.raises(MeshError):
        make_rect_mesh((0, 1), (0, 1), 1, 2)


def test_mesh_orientation_normalized():
    # clockwise input triangle is flipped to positive area
    m = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.area() == pytest.approx(0.5)


def test_mesh_json_roundtrip():
    m = make_rect_mesh((0, 1), (0, 2), 3, 4)
    m2 = TriMesh.from_json(m.to_json())
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.triangles, m2.triangles)


def test_single_triangle_mass_rowsums():
    mesh = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    fem = assemble_fem(mesh)
    # lumped rows of the element mass matrix are each area/3
    assert fem.h == pytest.approx(np.full(3, 1.0 / 6.0))


def test_single_triangle_stiffness():
    mesh = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    fem = assemble_fem(mesh)
    expect = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    assert fem.G.toarray() == pytest.approx(expect)


def test_h_sums_to_area():
    mesh = make_rect_mesh((0, 3), (0, 2), 7, 5)
    fem = assemble_fem(mesh)
    assert fem.h.sum() == pytest.approx(6.0, rel=1e-10)


def test_h_sum_stable_under_refinement():
    a1 = assemble_fem(make_rect_mesh((0, 1), (0, 1), 5, 5)).h.sum()
    a2 = assemble_fem(make_rect_mesh((0, 1), (0, 1), 10, 10)).h.sum()
    assert a1 == pytest.approx(a2, rel=1e-10)


def test_stiffness_annihilates_constants():
    fem = assemble_fem(make_rect_mesh((0, 1), (0, 1), 6, 6))
    assert np.abs(fem.G @ np.ones(fem.n)).max() < 1e-10


def test_stiffness_positive_semidefinite():
    fem = assemble_fem(make_rect_mesh((0, 1), (0, 1), 5, 5))
    eig = np.linalg.eigvalsh(fem.G.toarray())
    assert eig.min() > -1e-10


def test_projector_at_vertex():
    mesh = make_rect_mesh((0, 1), (0, 1), 3, 3)
    a = projector(mesh, [[0.5, 0.5]])
    row = a.toarray()[0]
    assert np.count_nonzero(row) == 1
    assert row.max() == pytest.approx(1.0)


def test_projector_at_centroid():
    mesh = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    a = projector(mesh, [[1.0 / 3.0, 1.0 / 3.0]])
    assert sorted(a.toarray()[0]) == pytest.approx([1 / 3, 1 / 3, 1 / 3])


def test_projector_at_edge_midpoint():
    mesh = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    a = projector(mesh, [[0.5, 0.0]])
    vals = sorted(a.toarray()[0])
    assert vals == pytest.approx([0.0, 0.5, 0.5])


def test_projector_rows_convex():
    mesh = make_rect_mesh((0, 1), (0, 1), 5, 5)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(50, 2))
    a = projector(mesh, pts).toarray()
    assert a.min() >= 0.0
    assert a.sum(axis=1) == pytest.approx(np.ones(50), abs=1e-12)


def test_projector_outside_raises():
    mesh = make_rect_mesh((0, 1), (0, 1), 3, 3)
    with pytest.raises(LocationOutsideMesh) as err:
        projector(mesh, [[0.5, 0.5], [2.0, 2.0]])
    assert err.value.index == 1
