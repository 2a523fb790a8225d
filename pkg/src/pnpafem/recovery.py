"""Patch-averaging operators on P1 spaces.

Gradient recovery turns the element-wise constant gradient of a discrete
function into a continuous piecewise-linear vector field by averaging
over vertex patches; flux recovery does the same for the coefficient-
weighted gradient with the coefficient frozen at the vertex.  The two
Clement-type interpolants map merely integrable data (pi_h) or data with
one-sided element traces (Pi_h) into the P1 space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from pnpafem.fem_core import (
    FeFunction,
    QuadratureRule,
    assemble_load,
    element_gradients,
    p1_geometry,
    sample_values,
    quadrature_rule,
)
from pnpafem.mesh import Mesh


class WeightScheme(enum.Enum):
    """Patch-averaging weights: equal per element, or proportional to area."""

    UNIFORM = "uniform"
    AREA = "area"


DEFAULT_WEIGHTS = WeightScheme.AREA


@dataclass(frozen=True, eq=False)
class RecoveredField:
    """Continuous P1 vector field given by one 2-vector per vertex."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != (self.mesh.n_vertices, 2):
            raise ValueError("values must be (n_vertices, 2)")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)


def _patch_weights(m: Mesh, scheme: WeightScheme):
    """Per-(triangle, corner) averaging weight and per-vertex normalizer."""
    flat = m.triangles.ravel()
    if scheme is WeightScheme.UNIFORM:
        w = np.ones(len(flat))
    elif scheme is WeightScheme.AREA:
        area, _ = p1_geometry(m)
        w = np.repeat(area, 3)
    else:
        raise ValueError("unknown weight scheme %r" % (scheme,))
    denom = np.bincount(flat, weights=w, minlength=m.n_vertices)
    return flat, w, denom


def _average_element_vectors(m: Mesh, per_element: np.ndarray,
                             scheme: WeightScheme) -> np.ndarray:
    flat, w, denom = _patch_weights(m, scheme)
    out = np.empty((m.n_vertices, 2))
    for c in range(2):
        contrib = np.repeat(per_element[:, c], 3) * w
        out[:, c] = np.bincount(flat, weights=contrib, minlength=m.n_vertices) / denom
    return out


def gradient_recover(v: FeFunction, scheme: WeightScheme = DEFAULT_WEIGHTS) -> RecoveredField:
    """Average the element gradients of ``v`` into vertex values."""
    return RecoveredField(v.mesh, _average_element_vectors(
        v.mesh, element_gradients(v), scheme))


def flux_recover(v: FeFunction, alpha, scheme: WeightScheme = DEFAULT_WEIGHTS) -> RecoveredField:
    """Recover the weighted gradient alpha(x, v) grad v.

    The coefficient is evaluated once per vertex, at the vertex position
    and the vertex value of ``v``, and scales the averaged gradient; it
    is deliberately not sampled inside elements.  ``alpha(x, y, s)``
    takes coordinates and the state value.
    """
    m = v.mesh
    averaged = _average_element_vectors(m, element_gradients(v), scheme)
    try:
        a = np.asarray(alpha(m.vertices[:, 0], m.vertices[:, 1], v.coefficients),
                       dtype=np.float64)
    except Exception as exc:
        raise ValueError("coefficient not evaluable at vertices") from exc
    a = np.broadcast_to(a, (m.n_vertices,))
    return RecoveredField(m, averaged * a[:, None])


def clement_pi(v, m: Mesh, quad: QuadratureRule | None = None) -> FeFunction:
    """Clement interpolant with zero boundary values.

    Interior vertex z gets (v, phi_z) / (phi_z, 1); needs only that ``v``
    is integrable.  ``v`` may be a callable, a constant, an FeFunction,
    or a per-(triangle, quadrature-point) sample array.
    """
    quad = quad or quadrature_rule(4)
    if isinstance(v, FeFunction):
        v = sample_values(v, quad)
    numer = assemble_load(m, v, quad)
    denom = assemble_load(m, 1.0, quad)
    coeffs = np.where(m.boundary_vertex_flags, 0.0, numer / denom)
    return FeFunction(m, coeffs)


def clement_Pi(v, m: Mesh, scheme: WeightScheme = DEFAULT_WEIGHTS) -> FeFunction:
    """All-vertex averaging interpolant from one-sided element traces.

    ``v`` may be a per-element constant array (nt,), a per-corner trace
    array (nt, 3) aligned with the mesh's triangle storage, or a
    callable evaluated at each element's corners.
    """
    if callable(v):
        corners = m.vertices[m.triangles]
        traces = np.asarray(v(corners[:, :, 0], corners[:, :, 1]), dtype=np.float64)
        traces = np.broadcast_to(traces, m.triangles.shape)
    else:
        traces = np.asarray(v, dtype=np.float64)
        if traces.shape == (m.n_triangles,):
            traces = np.broadcast_to(traces[:, None], m.triangles.shape)
        elif traces.shape != m.triangles.shape:
            raise ValueError("traces must be (nt,) or (nt, 3)")
    flat, w, denom = _patch_weights(m, scheme)
    coeffs = np.bincount(flat, weights=traces.ravel() * w,
                         minlength=m.n_vertices) / denom
    return FeFunction(m, coeffs)


def recovered_divergence(r: RecoveredField) -> np.ndarray:
    """Element-wise (constant) divergence of a recovered field."""
    _, grads = p1_geometry(r.mesh)
    corner = r.values[r.mesh.triangles]
    return np.einsum("tkd,tkd->t", corner, grads)


def recovered_samples(r: RecoveredField, quad: QuadratureRule) -> np.ndarray:
    """Field values at all quadrature nodes, shape (nt, nq, 2)."""
    return np.einsum("qk,tkd->tqd", quad.points, r.values[r.mesh.triangles])
