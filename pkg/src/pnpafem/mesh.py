"""Conforming 2D triangulations with uniform and adaptive bisection refinement.

A mesh is immutable: every refinement operation returns a new mesh and
never touches its input.  Triangles are stored base-first, i.e. the edge
between local vertices 0 and 1 is the triangle's designated refinement
edge and local vertex 2 is the peak.  Newest-vertex bisection then only
ever needs the stored ordering, no extra bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Shape-regularity floor (degrees) guaranteed by the built-in refiners on
# meshes derived from make_uniform_unit_square; asserted after refinement.
MIN_ANGLE_FLOOR_DEG = 20.0

_ANGLE_SLACK = 1e-9


class Mesh:
    """Immutable conforming triangulation of a polygonal 2D domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices, positively oriented, base-first (the refinement
        edge of each triangle is ``triangles[t, 0:2]``).

    Attributes
    ----------
    edges : (ne, 2) int array
        Unique edges as sorted vertex pairs.
    triangle_edges : (nt, 3) int array
        Global edge index of the local edge opposite each local vertex.
    edge_triangles : (ne, 2) int array
        Incident triangles per edge, -1 in the second slot on the boundary.
    boundary_edge_flags, boundary_vertex_flags : bool arrays
    refinement_edge : (nt,) int array
        Global edge index of each triangle's bisection edge.
    """

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must be (nt, 3)")
        if triangles.size and triangles.max() >= len(vertices):
            raise ValueError("triangle refers to missing vertex")

        area2 = _doubled_signed_areas(vertices, triangles)
        if np.any(area2 <= 0.0):
            raise ValueError("all triangles must be positively oriented")

        edges, triangle_edges, edge_triangles = _derive_edges(triangles, len(vertices))
        boundary_edge = edge_triangles[:, 1] < 0
        boundary_vertex = np.zeros(len(vertices), dtype=bool)
        boundary_vertex[edges[boundary_edge].ravel()] = True

        self.vertices = vertices
        self.triangles = triangles
        self.edges = edges
        self.triangle_edges = triangle_edges
        self.edge_triangles = edge_triangles
        self.boundary_edge_flags = boundary_edge
        self.boundary_vertex_flags = boundary_vertex
        # base edge = local edge opposite the peak (local vertex 2)
        self.refinement_edge = triangle_edges[:, 2].copy()
        for arr in (self.vertices, self.triangles, self.edges, self.triangle_edges,
                    self.edge_triangles, self.boundary_edge_flags,
                    self.boundary_vertex_flags, self.refinement_edge):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Mesh":
        """Build a mesh from raw arrays, assigning refinement edges.

        Each triangle's refinement edge is set to its longest edge, ties
        broken by the smallest opposite-vertex index; vertex order is
        normalized to base-first with positive orientation.
        """
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        triangles = _longest_edge_first(vertices, triangles)
        area2 = _doubled_signed_areas(vertices, triangles)
        if np.any(area2 == 0.0):
            raise ValueError("degenerate triangle")
        flip = area2 < 0.0
        # swapping the two base vertices keeps the base edge, fixes orientation
        triangles[flip] = triangles[flip][:, [1, 0, 2]]
        return cls(vertices, triangles)


@dataclass(frozen=True)
class PatchIndex:
    """Patch queries: triangles around a vertex, an edge, or a triangle."""

    vertex_to_triangles: tuple
    edge_to_triangles: tuple
    triangle_to_neighbors_sharing_vertex: tuple


@dataclass(frozen=True)
class MarkSet:
    """Set of triangle indices selected for refinement."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)
        idx.setflags(write=False)

    def __len__(self) -> int:
        return len(self.indices)


def _doubled_signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices[triangles]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def _derive_edges(triangles: np.ndarray, n_vertices: int):
    nt = len(triangles)
    # local edge k sits opposite local vertex k
    raw = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    edges, inverse = np.unique(np.sort(raw, axis=1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    triangle_edges = inverse.reshape(3, nt).T.copy()

    counts = np.bincount(inverse, minlength=len(edges))
    if counts.max(initial=0) > 2:
        raise ValueError("nonconforming mesh: edge shared by more than 2 triangles")
    tri_ids = np.tile(np.arange(nt, dtype=np.int64), 3)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(edges)))
    edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
    edge_triangles[:, 0] = tri_ids[order][starts]
    twice = counts == 2
    edge_triangles[twice, 1] = tri_ids[order][starts[twice] + 1]
    return edges, triangle_edges, edge_triangles


def _longest_edge_first(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices[triangles]
    sq = np.stack([
        ((v[:, 1] - v[:, 2]) ** 2).sum(axis=1),
        ((v[:, 2] - v[:, 0]) ** 2).sum(axis=1),
        ((v[:, 0] - v[:, 1]) ** 2).sum(axis=1),
    ], axis=1)
    longest = sq.max(axis=1, keepdims=True)
    # candidate base = any edge of maximal length; tie-break on the global
    # index of the opposite vertex (opposite of local edge k is vertex k)
    candidates = np.where(sq == longest, triangles, np.iinfo(np.int64).max)
    k = np.argmin(candidates, axis=1)
    out = np.empty_like(triangles)
    for kk in range(3):
        rows = k == kk
        out[rows] = triangles[np.ix_(rows.nonzero()[0], [(kk + 1) % 3, (kk + 2) % 3, kk])]
    return out


def min_angle_degrees(m: Mesh) -> float:
    """Smallest interior angle over all triangles, in degrees."""
    v = m.vertices[m.triangles]
    worst = np.inf
    for i in range(3):
        u = v[:, (i + 1) % 3] - v[:, i]
        w = v[:, (i + 2) % 3] - v[:, i]
        cosang = (u * w).sum(axis=1) / np.sqrt((u * u).sum(axis=1) * (w * w).sum(axis=1))
        ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        worst = min(worst, ang.min(initial=np.inf))
    return float(worst)


def _assert_shape_regular(m: Mesh) -> Mesh:
    assert min_angle_degrees(m) >= MIN_ANGLE_FLOOR_DEG - _ANGLE_SLACK, \
        "refinement violated the minimum-angle floor"
    return m


def make_uniform_unit_square(n: int) -> Mesh:
    """Uniform n-by-n grid of the unit square, each cell split by the
    bottom-left to top-right diagonal.

    The result has (n+1)^2 vertices and 2 n^2 triangles; every triangle is
    right-isoceles with the cell diagonal as its refinement edge, so the
    whole newest-vertex-bisection class keeps a 45 degree minimum angle.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i = i.ravel()
    j = j.ravel()
    vid = lambda ii, jj: jj * (n + 1) + ii
    lower = np.column_stack([vid(i + 1, j + 1), vid(i, j), vid(i + 1, j)])
    upper = np.column_stack([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return _assert_shape_regular(Mesh(vertices, np.vstack([lower, upper])))


def patches(m: Mesh) -> PatchIndex:
    """Build the vertex, edge and triangle patch tables for ``m``."""
    flat = m.triangles.ravel()
    tri_of_slot = np.repeat(np.arange(m.n_triangles, dtype=np.int64), 3)
    order = np.argsort(flat, kind="stable")
    starts = np.searchsorted(flat[order], np.arange(m.n_vertices))
    ends = np.append(starts[1:], len(flat))
    vertex_to_triangles = tuple(
        np.sort(tri_of_slot[order][s:e]) for s, e in zip(starts, ends)
    )
    edge_to_triangles = tuple(row[row >= 0].copy() for row in m.edge_triangles)
    triangle_to_neighbors = tuple(
        np.unique(np.concatenate([vertex_to_triangles[z] for z in tri]))
        for tri in m.triangles
    )
    return PatchIndex(vertex_to_triangles, edge_to_triangles, triangle_to_neighbors)


def mesh_size(m: Mesh):
    """Return (h_max, per-triangle diameter), diameter = longest edge."""
    v = m.vertices[m.triangles]
    lengths = np.stack([
        np.linalg.norm(v[:, 1] - v[:, 2], axis=1),
        np.linalg.norm(v[:, 2] - v[:, 0], axis=1),
        np.linalg.norm(v[:, 0] - v[:, 1], axis=1),
    ], axis=1)
    per_triangle = lengths.max(axis=1)
    return float(per_triangle.max()), per_triangle


def refinement_parentage(m: Mesh):
    """(parent vertex count, midpoint parent-edge endpoints) or None.

    Present on meshes produced by the refiners; new vertex nv_parent + k
    is the midpoint of the parent vertices in row k.  Used for nodal
    transfer of discrete functions onto the refined mesh.
    """
    return getattr(m, "_parentage", None)


def refine_uniform(m: Mesh) -> Mesh:
    """Red refinement: every triangle splits into 4 similar children."""
    nv = m.n_vertices
    midpoints = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    vertices = np.vstack([m.vertices, midpoints])

    a, b, c = m.triangles[:, 0], m.triangles[:, 1], m.triangles[:, 2]
    # midpoint of the local edge opposite vertex k
    mbc = nv + m.triangle_edges[:, 0]
    mca = nv + m.triangle_edges[:, 1]
    mab = nv + m.triangle_edges[:, 2]
    children = np.vstack([
        np.column_stack([a, mab, mca]),
        np.column_stack([b, mbc, mab]),
        np.column_stack([c, mca, mbc]),
        np.column_stack([mab, mbc, mca]),
    ])
    vertices.setflags(write=False)
    out = _assert_shape_regular(Mesh.from_arrays(vertices, children))
    out._parentage = (nv, m.edges)
    return out


def refine_marked(m: Mesh, marks: MarkSet) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus conformity closure.

    Marked triangles are bisected at their refinement edge.  Closure adds
    whatever further bisections are needed so no hanging node survives:
    whenever any edge of a triangle is due to be cut, the triangle's own
    refinement edge is cut as well, and the fixpoint of that rule lets each
    triangle be split independently into 1, 2, 3 or 4 children.

    An empty mark set returns the mesh unchanged.
    """
    indices = marks.indices if isinstance(marks, MarkSet) else \
        np.unique(np.asarray(marks, dtype=np.int64))
    if len(indices) == 0:
        return m
    if indices.min() < 0 or indices.max() >= m.n_triangles:
        raise ValueError("mark outside triangle range")

    cut = np.zeros(m.n_edges, dtype=bool)
    cut[m.refinement_edge[indices]] = True
    base = m.triangle_edges[:, 2]
    while True:
        need = cut[m.triangle_edges].any(axis=1) & ~cut[base]
        if not need.any():
            break
        cut[base[need]] = True

    nv = m.n_vertices
    new_id = np.full(m.n_edges, -1, dtype=np.int64)
    new_id[cut] = nv + np.arange(int(cut.sum()))
    midpoints = 0.5 * (m.vertices[m.edges[cut, 0]] + m.vertices[m.edges[cut, 1]])
    vertices = np.vstack([m.vertices, midpoints])

    a, b, c = m.triangles[:, 0], m.triangles[:, 1], m.triangles[:, 2]
    mbc, mca, mab = (new_id[m.triangle_edges[:, k]] for k in range(3))
    cut_bc, cut_ca, cut_ab = (cut[m.triangle_edges[:, k]] for k in range(3))

    blocks = []
    keep = ~cut_ab
    blocks.append(m.triangles[keep])
    # first bisection at mab: children (c, a, mab) and (b, c, mab); each is
    # bisected again iff its own base, a parent edge, is due to be cut
    left_whole = cut_ab & ~cut_ca
    left_split = cut_ab & cut_ca
    blocks.append(np.column_stack([c, a, mab])[left_whole])
    blocks.append(np.column_stack([mab, c, mca])[left_split])
    blocks.append(np.column_stack([a, mab, mca])[left_split])
    right_whole = cut_ab & ~cut_bc
    right_split = cut_ab & cut_bc
    blocks.append(np.column_stack([b, c, mab])[right_whole])
    blocks.append(np.column_stack([mab, b, mbc])[right_split])
    blocks.append(np.column_stack([c, mab, mbc])[right_split])

    vertices.setflags(write=False)
    out = _assert_shape_regular(Mesh(vertices, np.vstack(blocks)))
    out._parentage = (nv, m.edges[cut].copy())
    return out


def write_legacy_vtk(path, m: Mesh, point_data=None, cell_data=None) -> None:
    """Write the mesh (and optional nodal/element scalars) as legacy ASCII VTK.

    ``point_data`` and ``cell_data`` are name -> array mappings; insertion
    order is preserved in the file.
    """
    lines = [
        "# vtk DataFile Version 2.0",
        "triangulation",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        "POINTS %d double" % m.n_vertices,
    ]
    lines.extend("%.10e %.10e 0.0" % (x, y) for x, y in m.vertices)
    lines.append("CELLS %d %d" % (m.n_triangles, 4 * m.n_triangles))
    lines.extend("3 %d %d %d" % tuple(t) for t in m.triangles)
    lines.append("CELL_TYPES %d" % m.n_triangles)
    lines.extend(["5"] * m.n_triangles)

    def scalar_block(name, values):
        yield "SCALARS %s double 1" % name
        yield "LOOKUP_TABLE default"
        for val in np.asarray(values, dtype=np.float64):
            yield "%.10e" % val

    if point_data:
        lines.append("POINT_DATA %d" % m.n_vertices)
        for name, values in point_data.items():
            if len(values) != m.n_vertices:
                raise ValueError("point data %r has wrong length" % name)
            lines.extend(scalar_block(name, values))
    if cell_data:
        lines.append("CELL_DATA %d" % m.n_triangles)
        for name, values in cell_data.items():
            if len(values) != m.n_triangles:
                raise ValueError("cell data %r has wrong length" % name)
            lines.extend(scalar_block(name, values))

    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
