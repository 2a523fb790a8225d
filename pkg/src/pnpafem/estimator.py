"""Recovery-based a posteriori error indicators.

For the potential the local indicator is

    eta_{tau,phi} = ||D_h(phi_h)||_{0,tau} + h_tau ||R_1h||_{0,tau},

with D_h(phi_h) = G_h phi_h - epsilon grad phi_h the recovered-flux
mismatch and R_1h = sum_i q^i p_h^i + div(G_h phi_h) + f the recovered
strong residual.  Each species i adds its own flux mismatch, the drift
mismatch gamma (Gt_h phi_h - grad phi_h) built on plain gradient
recovery, and the recovered strong residual R_2h of its equation:

    eta_{tau,p^i} = ||D_h(p_h^i)|| + ||D_h(phi_h)||
                    + ||gamma(x,p_h^i)(Gt_h phi_h - grad phi_h)||
                    + h_tau (||R_1h|| + ||R_2h||).

Global indicators aggregate by root-sum-square.  Edge jumps of the
weighted normal flux are computed as diagnostics only; marking never
sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pnpafem.fem_core import (
    element_gradients,
    p1_geometry,
    quadrature_points,
    quadrature_rule,
    sample_values,
)
from pnpafem.mesh import Mesh, mesh_size
from pnpafem.recovery import (
    WeightScheme,
    DEFAULT_WEIGHTS,
    flux_recover,
    gradient_recover,
    recovered_divergence,
    recovered_samples,
)


@dataclass(frozen=True, eq=False)
class EstimatorReport:
    """Per-element indicators with their term breakdown and global values.

    ``terms`` maps "d_phi" and "h_r1" plus, per species i (1-based),
    "d_p<i>", "drift_p<i>" and "h_r2_p<i>" to per-element arrays; the
    h_* entries are already h_tau-weighted.
    """

    eta_phi: np.ndarray
    eta_p: tuple
    terms: dict
    global_eta_phi: float
    global_eta_p: tuple


@dataclass(frozen=True)
class JumpDiagnostics:
    """Scaled flux jumps h_l^(1/2) ||[coef grad u . n]||_{0,l} per interior edge."""

    edge_indices: np.ndarray
    phi: np.ndarray
    p: tuple


def _element_norms(area, weights, sq_samples):
    # sq_samples: (nt, nq) integrand squared at quadrature nodes
    return np.sqrt(area * (sq_samples @ weights))


def build_report(m: Mesh, case, state,
                 scheme: WeightScheme = DEFAULT_WEIGHTS,
                 quad_degree: int | None = None) -> EstimatorReport:
    """Evaluate all indicators for a coupled solve on its mesh."""
    if state.phi.mesh is not m:
        raise ValueError("state does not live on the given mesh")
    bundle = case.bundle
    quad = quadrature_rule(quad_degree or case.quad_degree)
    x, y = quadrature_points(m, quad)
    area, _ = p1_geometry(m)
    _, h_tau = mesh_size(m)

    eps = np.broadcast_to(np.asarray(bundle.epsilon(x, y), dtype=np.float64), x.shape)
    grad_phi = element_gradients(state.phi)
    g_phi = flux_recover(state.phi, lambda gx, gy, s: bundle.epsilon(gx, gy), scheme)
    mismatch = recovered_samples(g_phi, quad) - eps[:, :, None] * grad_phi[:, None, :]
    d_phi = _element_norms(area, quad.weights, (mismatch ** 2).sum(axis=2))

    p_samples = [sample_values(p, quad) for p in state.p]
    r1 = np.broadcast_to(np.asarray(bundle.f(x, y), dtype=np.float64), x.shape).copy()
    r1 += recovered_divergence(g_phi)[:, None]
    for q, s in zip(bundle.charges, p_samples):
        r1 += q * s
    h_r1 = h_tau * _element_norms(area, quad.weights, r1 ** 2)

    eta_phi = d_phi + h_r1
    terms = {"d_phi": d_phi, "h_r1": h_r1}

    gt_phi = gradient_recover(state.phi, scheme)
    gt_samples = recovered_samples(gt_phi, quad)
    gt_div = recovered_divergence(gt_phi)
    drift_mismatch = gt_samples - grad_phi[:, None, :]

    eta_p = []
    for i in range(bundle.n_species):
        s = p_samples[i]
        grad_p = element_gradients(state.p[i])
        g_p = flux_recover(state.p[i], bundle.alpha[i], scheme)
        a = np.broadcast_to(np.asarray(bundle.alpha[i](x, y, s), dtype=np.float64), x.shape)
        diff = recovered_samples(g_p, quad) - a[:, :, None] * grad_p[:, None, :]
        d_p = _element_norms(area, quad.weights, (diff ** 2).sum(axis=2))

        gam = np.broadcast_to(np.asarray(bundle.gamma[i](x, y, s), dtype=np.float64), x.shape)
        drift = _element_norms(area, quad.weights,
                               gam ** 2 * (drift_mismatch ** 2).sum(axis=2))

        # div beta and div(gamma * Gt phi) by the chain rule; gamma is
        # affine in the state, so every piece is polynomial on tau
        by_x, by_y = bundle.beta_y[i](x, y, s)
        div_beta = bundle.beta_div_x[i](x, y, s) \
            + by_x * grad_p[:, None, 0] + by_y * grad_p[:, None, 1]
        gx_x, gx_y = bundle.gamma_grad_x[i](x, y, s)
        gam_y = bundle.gamma_y[i](x, y, s)
        grad_gam_x = gx_x + gam_y * grad_p[:, None, 0]
        grad_gam_y = gx_y + gam_y * grad_p[:, None, 1]
        div_drift = grad_gam_x * gt_samples[:, :, 0] + grad_gam_y * gt_samples[:, :, 1] \
            + gam * gt_div[:, None]
        r2 = recovered_divergence(g_p)[:, None] + div_beta \
            - bundle.g[i](x, y, s) + div_drift
        h_r2 = h_tau * _element_norms(area, quad.weights, r2 ** 2)

        eta_p.append(d_p + d_phi + drift + h_r1 + h_r2)
        terms["d_p%d" % (i + 1)] = d_p
        terms["drift_p%d" % (i + 1)] = drift
        terms["h_r2_p%d" % (i + 1)] = h_r2

    return EstimatorReport(
        eta_phi=eta_phi,
        eta_p=tuple(eta_p),
        terms=terms,
        global_eta_phi=float(np.sqrt((eta_phi ** 2).sum())),
        global_eta_p=tuple(float(np.sqrt((e ** 2).sum())) for e in eta_p),
    )


def estimate_phi(m: Mesh, case, state, scheme: WeightScheme = DEFAULT_WEIGHTS) -> np.ndarray:
    """Per-element indicator for the potential."""
    return build_report(m, case, state, scheme).eta_phi


def estimate_p(m: Mesh, case, state, species: int,
               scheme: WeightScheme = DEFAULT_WEIGHTS) -> np.ndarray:
    """Per-element indicator for species ``species`` (0-based)."""
    return build_report(m, case, state, scheme).eta_p[species]


def effectivity(report: EstimatorReport, true_errors):
    """Global indicator over true H1 error, per unknown.

    ``true_errors`` is (e_phi, sequence of per-species errors).
    """
    e_phi, e_p = true_errors
    if e_phi <= 0.0 or any(e <= 0.0 for e in e_p):
        raise ValueError("true errors must be positive")
    return (report.global_eta_phi / e_phi,
            tuple(g / e for g, e in zip(report.global_eta_p, e_p)))


def jump_diagnostics(m: Mesh, case, state) -> JumpDiagnostics:
    """Weighted normal-flux jumps across interior edges, 2-point Gauss.

    The potential uses epsilon as the weight, species i uses
    alpha^i(x, p_h^i); the discrete state is continuous, so only the
    one-sided gradients differ across an edge.
    """
    if state.phi.mesh is not m:
        raise ValueError("state does not live on the given mesh")
    bundle = case.bundle
    interior = np.flatnonzero(~m.boundary_edge_flags)
    ends = m.edges[interior]
    va = m.vertices[ends[:, 0]]
    vb = m.vertices[ends[:, 1]]
    tangent = vb - va
    lengths = np.linalg.norm(tangent, axis=1)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    # Gauss points at mid +- (1/(2 sqrt 3)) (b - a), both weight |l|/2
    offs = 0.5 / np.sqrt(3.0)
    mids = 0.5 * (va + vb)
    gpts = np.stack([mids - offs * tangent, mids + offs * tangent], axis=1)
    side = m.edge_triangles[interior]

    def edge_jump(u, coef, state_dependent):
        grads = element_gradients(u)
        # state at the Gauss points from the edge endpoints (linear trace)
        ua = u.coefficients[ends[:, 0]]
        ub = u.coefficients[ends[:, 1]]
        svals = np.stack([ua + (0.5 - offs) * (ub - ua),
                          ua + (0.5 + offs) * (ub - ua)], axis=1)
        jump = np.zeros((len(interior), 2))
        for k, sign in ((0, 1.0), (1, -1.0)):
            # constant per-element gradient, broadcast over both Gauss points
            gn = (grads[side[:, k]] * normal).sum(axis=1)[:, None]
            if state_dependent:
                w = coef(gpts[:, :, 0], gpts[:, :, 1], svals)
            else:
                w = coef(gpts[:, :, 0], gpts[:, :, 1])
            jump += sign * np.broadcast_to(np.asarray(w, dtype=np.float64),
                                           jump.shape) * gn
        norm_sq = 0.5 * lengths * (jump ** 2).sum(axis=1)
        return np.sqrt(lengths) * np.sqrt(norm_sq)

    phi_jumps = edge_jump(state.phi, bundle.epsilon, state_dependent=False)
    p_jumps = tuple(edge_jump(state.p[i], bundle.alpha[i], state_dependent=True)
                    for i in range(bundle.n_species))
    return JumpDiagnostics(edge_indices=interior, phi=phi_jumps, p=p_jumps)
