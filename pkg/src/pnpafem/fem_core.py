"""P1 triangular finite elements.

Quadrature on the reference triangle, vectorized assembly of weighted
stiffness / convection / mass forms and load vectors, Dirichlet
elimination, sparse solves, and H1/L2 error norms.

Scalar and vector fields passed to the assembly routines may be plain
numbers, callables ``field(x, y)`` operating on coordinate arrays, or
precomputed per-(triangle, quadrature-point) sample arrays.  The last
form is how state-dependent coefficients (evaluated through a discrete
solution) enter without the assembler knowing about them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from pnpafem.mesh import Mesh

# Free systems up to this size go to the direct factorization; larger SPD
# systems fall back to diagonally preconditioned CG.
DIRECT_SOLVE_LIMIT = 200_000

_SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle, weights normalized to sum 1.

    ``points`` holds barycentric coordinates, one row per node, so an
    integral over a physical triangle tau is |tau| * sum(w_q * f(x_q)).
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)


def _symmetric_deg4() -> QuadratureRule:
    # 6-point rule, exact through total degree 4
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), np.array(wts), degree=4)


def _duffy_deg10() -> QuadratureRule:
    # 6x6 tensor Gauss-Legendre under the Duffy map x=u, y=v(1-u); the
    # Jacobian (1-u) raises the u-degree by one, and 6 Gauss points are
    # exact through degree 11 per axis, so total degree 10 is covered.
    # No node lies on a vertex of the triangle.
    g, w = np.polynomial.legendre.leggauss(6)
    u = 0.5 * (g + 1.0)
    wu = 0.5 * w
    uu, vv = np.meshgrid(u, u, indexing="ij")
    wumat = np.outer(wu * (1.0 - u), wu)
    x = uu.ravel()
    y = (vv * (1.0 - uu)).ravel()
    points = np.column_stack([1.0 - x - y, x, y])
    weights = 2.0 * wumat.ravel()
    return QuadratureRule(points, weights, degree=10)


_RULES = {4: _symmetric_deg4(), 10: _duffy_deg10()}


def quadrature_rule(degree: int = 4) -> QuadratureRule:
    """Smallest built-in rule exact for the requested total degree."""
    if degree <= 4:
        return _RULES[4]
    if degree <= 10:
        return _RULES[10]
    raise ValueError("no built-in rule beyond degree 10")


DEFAULT_QUADRATURE = quadrature_rule(4)


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Piecewise-linear function given by one coefficient per mesh vertex."""

    mesh: Mesh
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        if coeffs.shape != (self.mesh.n_vertices,):
            raise ValueError("coefficient length must equal vertex count")
        object.__setattr__(self, "coefficients", coeffs)
        coeffs.setflags(write=False)


@dataclass(frozen=True)
class ScalarField:
    """Closed-form scalar field: value, gradient and optional Laplacian.

    ``value(x, y)`` returns values, ``gradient(x, y)`` a (gx, gy) pair,
    ``laplacian(x, y)`` the Laplacian; all accept coordinate arrays.
    """

    value: object
    gradient: object
    laplacian: object = None


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Linear system over the free DOFs of a mesh.

    ``free_dof_map[k]`` is the vertex carried by free index k;
    ``boundary_values`` holds the eliminated vertices' prescribed values
    (zero where free).  A freshly assembled system is "full": every
    vertex is free and no value is prescribed.
    """

    mesh: Mesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free_dof_map: np.ndarray
    boundary_values: np.ndarray


def full_system(m: Mesh, matrix, rhs) -> SparseSystem:
    return SparseSystem(m, matrix.tocsr(), np.asarray(rhs, dtype=np.float64),
                        np.arange(m.n_vertices), np.zeros(m.n_vertices))


# ---------------------------------------------------------------------------
# geometry and field sampling
# ---------------------------------------------------------------------------

def p1_geometry(m: Mesh):
    """Per-triangle area and constant basis gradients, cached on the mesh."""
    cached = getattr(m, "_p1_geometry", None)
    if cached is not None:
        return cached
    v = m.vertices[m.triangles]
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    grads = np.empty((len(m.triangles), 3, 2))
    for i in range(3):
        e = v[:, (i + 2) % 3] - v[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= det[:, None, None]
    area.setflags(write=False)
    grads.setflags(write=False)
    m._p1_geometry = (area, grads)
    return area, grads


def quadrature_points(m: Mesh, quad: QuadratureRule):
    """Physical coordinates of the rule's nodes, shape (nt, nq) per axis."""
    v = m.vertices[m.triangles]
    phys = np.einsum("qk,tkd->tqd", quad.points, v)
    return phys[:, :, 0], phys[:, :, 1]


def sample_values(f: FeFunction, quad: QuadratureRule) -> np.ndarray:
    """Values of ``f`` at all quadrature nodes, shape (nt, nq)."""
    return np.einsum("qk,tk->tq", quad.points, f.coefficients[f.mesh.triangles])


def element_gradients(f: FeFunction) -> np.ndarray:
    """Constant gradient of ``f`` per triangle, shape (nt, 2)."""
    _, grads = p1_geometry(f.mesh)
    return np.einsum("tk,tkd->td", f.coefficients[f.mesh.triangles], grads)


def _sample_scalar(field, x, y) -> np.ndarray:
    if isinstance(field, np.ndarray) and field.shape == x.shape:
        return field
    if callable(field):
        try:
            out = np.asarray(field(x, y), dtype=np.float64)
        except Exception as exc:
            raise ValueError("scalar field not evaluable at quadrature points") from exc
        return np.broadcast_to(out, x.shape)
    return np.full(x.shape, float(field))


def _sample_vector(field, x, y) -> np.ndarray:
    if isinstance(field, np.ndarray) and field.shape == x.shape + (2,):
        return field
    if callable(field):
        try:
            fx, fy = field(x, y)
        except Exception as exc:
            raise ValueError("vector field not evaluable at quadrature points") from exc
    else:
        fx, fy = field
    out = np.empty(x.shape + (2,))
    out[:, :, 0] = np.broadcast_to(np.asarray(fx, dtype=np.float64), x.shape)
    out[:, :, 1] = np.broadcast_to(np.asarray(fy, dtype=np.float64), x.shape)
    return out


def _scatter_matrix(m: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = m.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    nv = m.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_weighted_stiffness(m: Mesh, weight, quad: QuadratureRule | None = None):
    """Matrix of (weight grad u, grad v); ``weight`` must stay positive.

    Returns the full vertex-indexed sparse matrix; combine with a load
    vector via :func:`full_system` and eliminate boundary DOFs afterwards.
    """
    quad = quad or DEFAULT_QUADRATURE
    x, y = quadrature_points(m, quad)
    w = _sample_scalar(weight, x, y)
    if np.min(w) <= 0.0:
        raise ValueError("stiffness weight has a non-positive sample (min %g)" % np.min(w))
    area, grads = p1_geometry(m)
    wbar = w @ quad.weights
    local = np.einsum("tid,tjd->tij", grads, grads) * (area * wbar)[:, None, None]
    return _scatter_matrix(m, local)


def assemble_convection(m: Mesh, vector_field, quad: QuadratureRule | None = None):
    """Matrix with entries sum_tau int (F phi_j) . grad phi_i."""
    quad = quad or DEFAULT_QUADRATURE
    x, y = quadrature_points(m, quad)
    f = _sample_vector(vector_field, x, y)
    area, grads = p1_geometry(m)
    fg = np.einsum("tqd,tid->tqi", f, grads)
    local = np.einsum("tqi,qj,q->tij", fg, quad.points, quad.weights)
    local *= area[:, None, None]
    return _scatter_matrix(m, local)


def assemble_mass(m: Mesh, weight, quad: QuadratureRule | None = None):
    """Matrix of (weight u, v)."""
    quad = quad or DEFAULT_QUADRATURE
    x, y = quadrature_points(m, quad)
    w = _sample_scalar(weight, x, y)
    area, _ = p1_geometry(m)
    local = np.einsum("tq,qi,qj,q->tij", w, quad.points, quad.points, quad.weights)
    local *= area[:, None, None]
    return _scatter_matrix(m, local)


def assemble_load(m: Mesh, source, quad: QuadratureRule | None = None) -> np.ndarray:
    """Vector with entries sum_tau int source * phi_i."""
    quad = quad or DEFAULT_QUADRATURE
    x, y = quadrature_points(m, quad)
    s = _sample_scalar(source, x, y)
    area, _ = p1_geometry(m)
    contrib = np.einsum("tq,qi,q->ti", s, quad.points, quad.weights) * area[:, None]
    return np.bincount(m.triangles.ravel(), weights=contrib.ravel(),
                       minlength=m.n_vertices)


# ---------------------------------------------------------------------------
# Dirichlet elimination and solves
# ---------------------------------------------------------------------------

def apply_dirichlet(sys: SparseSystem, m: Mesh, values) -> SparseSystem:
    """Eliminate boundary vertices, prescribing ``values`` there.

    ``values`` is a per-vertex array; only its boundary entries are used.
    """
    if sys.mesh is not m:
        raise ValueError("system was assembled on a different mesh")
    if len(sys.free_dof_map) != m.n_vertices:
        raise ValueError("Dirichlet data already applied")
    values = np.asarray(values, dtype=np.float64)
    free = np.flatnonzero(~m.boundary_vertex_flags)
    fixed = np.flatnonzero(m.boundary_vertex_flags)
    bc = np.zeros(m.n_vertices)
    bc[fixed] = values[fixed]
    matrix = sys.matrix[free][:, free].tocsr()
    rhs = sys.rhs[free] - sys.matrix[free][:, fixed] @ bc[fixed]
    return SparseSystem(m, matrix, rhs, free, bc)


def apply_dirichlet_zero(sys: SparseSystem, m: Mesh) -> SparseSystem:
    """Eliminate boundary vertices with homogeneous data."""
    return apply_dirichlet(sys, m, np.zeros(m.n_vertices))


def solve_sparse_direct(matrix, rhs: np.ndarray) -> np.ndarray:
    """Direct sparse factorization solve (works for nonsymmetric matrices)."""
    if len(rhs) == 0:
        return np.zeros(0)
    return spla.splu(matrix.tocsc()).solve(rhs)


def solve_spd(sys: SparseSystem, direct_limit: int = DIRECT_SOLVE_LIMIT) -> FeFunction:
    """Solve an SPD reduced system and extend by the prescribed values.

    Direct factorization up to ``direct_limit`` unknowns, diagonally
    preconditioned CG beyond; the residual is audited against the
    1e-10 relative bound either way.
    """
    n = len(sys.rhs)
    if n == 0:
        return FeFunction(sys.mesh, sys.boundary_values.copy())
    if n <= direct_limit:
        x = solve_sparse_direct(sys.matrix, sys.rhs)
    else:
        diag = sys.matrix.diagonal()
        precond = spla.LinearOperator(sys.matrix.shape, lambda v: v / diag)
        x, info = _cg(sys.matrix, sys.rhs, precond)
        if info != 0:
            raise RuntimeError("CG did not converge within %d iterations" % info)
    rnorm = np.linalg.norm(sys.rhs - sys.matrix @ x)
    bound = _SOLVE_RTOL * np.linalg.norm(sys.rhs)
    if sys.rhs.any() and rnorm > bound:
        raise RuntimeError("linear solve residual %.3e exceeds bound %.3e" % (rnorm, bound))
    coeffs = sys.boundary_values.copy()
    coeffs[sys.free_dof_map] = x
    return FeFunction(sys.mesh, coeffs)


def _cg(matrix, rhs, precond):
    try:
        return spla.cg(matrix, rhs, M=precond, rtol=1e-12, atol=0.0, maxiter=20000)
    except TypeError:  # scipy < 1.12 spelling
        return spla.cg(matrix, rhs, M=precond, tol=1e-12, atol=0.0, maxiter=20000)


# ---------------------------------------------------------------------------
# evaluation and norms
# ---------------------------------------------------------------------------

def interpolate(m: Mesh, fn) -> FeFunction:
    """Nodal interpolant of ``fn(x, y)`` (or a constant) on the mesh."""
    if callable(fn):
        coeffs = np.asarray(fn(m.vertices[:, 0], m.vertices[:, 1]), dtype=np.float64)
        coeffs = np.broadcast_to(coeffs, (m.n_vertices,)).copy()
    else:
        coeffs = np.full(m.n_vertices, float(fn))
    return FeFunction(m, coeffs)


def evaluate(f: FeFunction, triangle: int, barycentric):
    """Value and (constant) gradient of ``f`` at a barycentric point."""
    lam = np.asarray(barycentric, dtype=np.float64)
    if lam.shape != (3,) or np.min(lam) < -1e-12:
        raise ValueError("barycentric point must be 3 nonnegative weights")
    local = f.coefficients[f.mesh.triangles[triangle]]
    _, grads = p1_geometry(f.mesh)
    value = float(lam @ local)
    gradient = local @ grads[triangle]
    return value, gradient


def h1_l2_errors(f: FeFunction, exact: ScalarField,
                 quad: QuadratureRule | None = None):
    """(L2, H1-seminorm, full H1) distance between ``f`` and an exact field."""
    quad = quad or DEFAULT_QUADRATURE
    m = f.mesh
    x, y = quadrature_points(m, quad)
    area, _ = p1_geometry(m)
    dval = sample_values(f, quad) - _sample_scalar(exact.value, x, y)
    gh = element_gradients(f)
    gx, gy = exact.gradient(x, y)
    dgx = gh[:, 0, None] - np.broadcast_to(np.asarray(gx, dtype=np.float64), x.shape)
    dgy = gh[:, 1, None] - np.broadcast_to(np.asarray(gy, dtype=np.float64), x.shape)
    l2sq = area @ (dval ** 2 @ quad.weights)
    semisq = area @ ((dgx ** 2 + dgy ** 2) @ quad.weights)
    return float(np.sqrt(l2sq)), float(np.sqrt(semisq)), float(np.sqrt(l2sq + semisq))


def h1_norm(f: FeFunction, quad: QuadratureRule | None = None) -> float:
    """Full H1 norm of a discrete function."""
    quad = quad or DEFAULT_QUADRATURE
    area, _ = p1_geometry(f.mesh)
    vals = sample_values(f, quad)
    gh = element_gradients(f)
    l2sq = area @ (vals ** 2 @ quad.weights)
    semisq = area @ (gh[:, 0] ** 2 + gh[:, 1] ** 2)
    return float(np.sqrt(l2sq + semisq))
