"""Triangulation container, uniform grids, bisection refinement, VTK."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnpafem.mesh import (
    MarkSet,
    Mesh,
    make_uniform_unit_square,
    mesh_size,
    min_angle_degrees,
    patches,
    refine_marked,
    refine_uniform,
    refinement_parentage,
    write_legacy_vtk,
)


def canonical(m):
    tris = np.sort(m.triangles, axis=1)
    order = np.lexsort(tris.T[::-1])
    return m.vertices, tris[order]


def test_uniform_grid_counts():
    m = make_uniform_unit_square(8)
    assert m.n_vertices == 81
    assert m.n_triangles == 128


def test_euler_formula_n2():
    m = make_uniform_unit_square(2)
    assert (m.n_vertices, m.n_triangles, m.n_edges) == (9, 8, 16)
    # V - E + T = 1 for a triangulated disk
    assert m.n_vertices - m.n_edges + m.n_triangles == 1


def test_center_vertex_patch_valence():
    m = make_uniform_unit_square(2)
    center = int(np.argmin(np.hypot(m.vertices[:, 0] - 0.5,
                                    m.vertices[:, 1] - 0.5)))
    pt = patches(m)
    assert len(pt.vertex_to_triangles[center]) == 6


def test_mesh_size_single_cell():
    m = make_uniform_unit_square(1)
    h_max, per_tri = mesh_size(m)
    assert h_max == pytest.approx(np.sqrt(2.0), abs=1e-15)
    assert per_tri.shape == (2,)
    assert np.all(per_tri == pytest.approx(np.sqrt(2.0)))


def test_positive_orientation_and_angles():
    for n in (1, 2, 5, 8):
        m = make_uniform_unit_square(n)
        v = m.vertices[m.triangles]
        d1, d2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        assert np.all(cross > 0)
        assert min_angle_degrees(m) == pytest.approx(45.0, abs=1e-12)


def test_refinement_edge_is_longest_on_fresh_grid():
    m = make_uniform_unit_square(3)
    v = m.vertices[m.triangles]
    base = np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
    _, longest = mesh_size(m)
    assert np.allclose(base, longest)


def test_uniform_refinement_matches_fresh_grid():
    fine = refine_uniform(make_uniform_unit_square(8))
    fresh = make_uniform_unit_square(16)
    fv, ft = canonical(fine)
    gv, gt = canonical(fresh)
    # same vertex set up to ordering
    assert fine.n_vertices == fresh.n_vertices == 289
    sf = np.lexsort((fv[:, 1], fv[:, 0]))
    sg = np.lexsort((gv[:, 1], gv[:, 0]))
    assert np.allclose(fv[sf], gv[sg])
    # same triangles after renumbering through the sorted vertex order
    rf = np.empty(fine.n_vertices, dtype=int)
    rf[sf] = np.arange(fine.n_vertices)
    rg = np.empty(fresh.n_vertices, dtype=int)
    rg[sg] = np.arange(fresh.n_vertices)
    a = np.sort(rf[ft], axis=1)
    b = np.sort(rg[gt], axis=1)
    a = a[np.lexsort(a.T[::-1])]
    b = b[np.lexsort(b.T[::-1])]
    assert np.array_equal(a, b)


def test_marked_refinement_closure_n1():
    m = make_uniform_unit_square(1)
    out = refine_marked(m, MarkSet(np.array([0])))
    # both triangles share the marked diagonal: closure bisects each once
    assert out.n_triangles == 4
    assert out.n_vertices == 5


def test_marked_refinement_keeps_conformity_and_shape():
    m = make_uniform_unit_square(4)
    rng = np.random.default_rng(3)
    for _ in range(4):
        marks = MarkSet(rng.choice(m.n_triangles, size=max(1, m.n_triangles // 5),
                                   replace=False))
        m = refine_marked(m, marks)
        assert min_angle_degrees(m) >= 20.0  # bisection of 45-90-45 stays in class
    assert min_angle_degrees(m) == pytest.approx(45.0, abs=1e-12)


def test_empty_marks_is_identity():
    m = make_uniform_unit_square(3)
    assert refine_marked(m, MarkSet(np.array([], dtype=int))) is m


def test_refinement_increases_dofs_monotonically():
    m = make_uniform_unit_square(2)
    for _ in range(3):
        out = refine_marked(m, MarkSet(np.array([0])))
        assert out.n_vertices > m.n_vertices
        m = out


def test_parentage_of_uniform_refinement():
    m = make_uniform_unit_square(2)
    out = refine_uniform(m)
    parent = refinement_parentage(out)
    assert parent is not None
    nv_old, pairs = parent
    assert nv_old == m.n_vertices
    assert out.n_vertices == nv_old + len(pairs)
    mids = 0.5 * (m.vertices[pairs[:, 0]] + m.vertices[pairs[:, 1]])
    assert np.allclose(out.vertices[nv_old:], mids)


def test_parentage_absent_on_fresh_mesh():
    assert refinement_parentage(make_uniform_unit_square(2)) is None


def test_nonconforming_input_rejected():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
                      [2.0, 0.0]])
    tris = np.array([[0, 1, 2], [1, 3, 2], [1, 4, 3], [1, 3, 4]])
    with pytest.raises(ValueError):
        Mesh.from_arrays(verts, tris)


def test_vertex_ids_in_range():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises((ValueError, IndexError)):
        Mesh.from_arrays(verts, np.array([[0, 1, 5]]))


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=31),
       st.integers(min_value=0, max_value=31))
def test_single_mark_yields_conforming_mesh(t1, t2):
    m = make_uniform_unit_square(4)
    marks = MarkSet(np.unique(np.array([t1, t2])))
    out = refine_marked(m, marks)
    # constructor re-derives edge incidence; reaching here means conforming
    assert out.n_triangles > m.n_triangles
    assert out.n_vertices - out.n_edges + out.n_triangles == 1
    boundary_edges = int(out.boundary_edge_flags.sum())
    interior = out.n_edges - boundary_edges
    assert 3 * out.n_triangles == 2 * interior + boundary_edges


def test_vtk_writer_layout(tmp_path):
    m = make_uniform_unit_square(2)
    path = tmp_path / "mesh.vtk"
    write_legacy_vtk(path, m,
                     point_data={"phi": np.arange(m.n_vertices, dtype=float)},
                     cell_data={"eta": np.arange(m.n_triangles, dtype=float)})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 2.0"
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert lines[4] == "POINTS 9 double"
    cells_at = lines.index("CELLS 8 32")
    assert all(ln.startswith("3 ") for ln in lines[cells_at + 1:cells_at + 9])
    types_at = lines.index("CELL_TYPES 8")
    assert all(ln == "5" for ln in lines[types_at + 1:types_at + 9])
    assert "POINT_DATA 9" in lines
    assert "SCALARS phi double 1" in lines
    assert "CELL_DATA 8" in lines
    assert "SCALARS eta double 1" in lines


def test_vtk_roundtrip_coordinates(tmp_path):
    m = make_uniform_unit_square(3)
    path = tmp_path / "m.vtk"
    write_legacy_vtk(path, m)
    lines = path.read_text().splitlines()
    start = lines.index("POINTS 16 double") + 1
    pts = np.array([[float(t) for t in ln.split()] for ln in lines[start:start + 16]])
    assert np.allclose(pts[:, :2], m.vertices)
    assert np.all(pts[:, 2] == 0.0)
