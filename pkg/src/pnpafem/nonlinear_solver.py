"""Decoupled solver for the discrete drift-diffusion system.

A Gummel sweep solves the Poisson equation with the current
concentrations as charge sources, then each species equation with the
fresh potential frozen, by a damped Newton iteration on the linearized
form

    a'(w; psi, v) = (alpha(.,w) grad psi + (alpha_y(.,w) grad w
                     + beta_y(.,w)) psi, grad v) + (g_y(.,w) psi, v)

plus the frozen-drift block (gamma_y(.,w) psi grad phi_h, grad v).
Sweeps repeat until the largest relative H1 update drops below the
Gummel tolerance.  All nonsymmetric inner systems are solved by direct
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pnpafem.fem_core import (
    DEFAULT_QUADRATURE,
    FeFunction,
    apply_dirichlet,
    assemble_convection,
    assemble_load,
    assemble_mass,
    assemble_weighted_stiffness,
    element_gradients,
    full_system,
    h1_norm,
    interpolate,
    p1_geometry,
    quadrature_points,
    sample_values,
    solve_sparse_direct,
    solve_spd,
)
from pnpafem.mesh import Mesh, refinement_parentage


@dataclass(frozen=True)
class SolverConfig:
    gummel_tol: float = 1e-8
    gummel_max_iter: int = 50
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    damping_min: float = 2.0 ** -10

    def __post_init__(self):
        if self.gummel_tol <= 0.0 or self.newton_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.gummel_max_iter < 1 or self.newton_max_iter < 1:
            raise ValueError("iteration limits must be at least 1")
        if not 0.0 < self.damping_min <= 1.0:
            raise ValueError("damping_min must lie in (0, 1]")


@dataclass(eq=False)
class CoupledState:
    """Discrete solution of one coupled solve.

    ``convergence_log`` holds the per-sweep maximum relative H1 update;
    ``detail_rows`` holds (iteration, unknown, residual) triples for the
    verbose CSV dump, including inner Newton residuals.
    """

    phi: FeFunction
    p: tuple
    convergence_log: list = field(default_factory=list)
    detail_rows: list = field(default_factory=list)
    converged: bool = False


def _phi_dirichlet_values(m: Mesh, case) -> np.ndarray:
    if case.phi_boundary is None:
        return np.zeros(m.n_vertices)
    return interpolate(m, case.phi_boundary).coefficients.copy()


def _assemble_gradient_load(m: Mesh, vf: np.ndarray, quad) -> np.ndarray:
    # functional v -> sum_tau int vf . grad v
    area, grads = p1_geometry(m)
    contrib = np.einsum("tqd,tid,q->ti", vf, grads, quad.weights) * area[:, None]
    return np.bincount(m.triangles.ravel(), weights=contrib.ravel(),
                       minlength=m.n_vertices)


def _alpha_samples(case, i: int, x, y, s) -> np.ndarray:
    a = np.broadcast_to(
        np.asarray(case.bundle.alpha[i](x, y, s), dtype=np.float64), x.shape)
    amin = a.min()
    if amin <= 0.0:
        t, q = np.unravel_index(np.argmin(a), a.shape)
        raise ValueError(
            "diffusion coefficient %g <= 0 for species %d at element %d, "
            "point (%g, %g), state %g" % (amin, i + 1, t, x[t, q], y[t, q], s[t, q]))
    if case.state_range is not None:
        lo, hi = case.state_range
        if s.min() < lo or s.max() > hi:
            # outside the certified solution range positivity was only
            # checked numerically above, so proceed but leave a trace
            pass
    return a


def solve_poisson_given_p(m: Mesh, case, p, quad=None) -> FeFunction:
    """Linear SPD solve of the potential equation with given species."""
    quad = quad or DEFAULT_QUADRATURE
    matrix = assemble_weighted_stiffness(m, case.bundle.epsilon, quad)
    x, y = quadrature_points(m, quad)
    src = np.broadcast_to(
        np.asarray(case.bundle.f(x, y), dtype=np.float64), x.shape).copy()
    for q, p_i in zip(case.bundle.charges, p):
        src += q * sample_values(p_i, quad)
    rhs = assemble_load(m, src, quad)
    sys = apply_dirichlet(full_system(m, matrix, rhs), m,
                          _phi_dirichlet_values(m, case))
    return solve_spd(sys)


def np_weak_residual(m: Mesh, case, i: int, p: FeFunction, phi: FeFunction,
                     quad=None) -> np.ndarray:
    """Full residual vector of species i's discrete equation at (p, phi)."""
    quad = quad or DEFAULT_QUADRATURE
    x, y = quadrature_points(m, quad)
    s = sample_values(p, quad)
    a = _alpha_samples(case, i, x, y, s)
    gam = case.bundle.gamma[i](x, y, s)
    bx, by = case.bundle.beta[i](x, y, s)
    grad_p = element_gradients(p)
    grad_phi = element_gradients(phi)
    vf = np.empty(x.shape + (2,))
    vf[:, :, 0] = a * grad_p[:, None, 0] + bx + gam * grad_phi[:, None, 0]
    vf[:, :, 1] = a * grad_p[:, None, 1] + by + gam * grad_phi[:, None, 1]
    r = _assemble_gradient_load(m, vf, quad)
    r += assemble_load(m, case.bundle.g[i](x, y, s), quad)
    return r


def _np_jacobian(m: Mesh, case, i: int, p: FeFunction, phi: FeFunction, quad):
    x, y = quadrature_points(m, quad)
    s = sample_values(p, quad)
    a = _alpha_samples(case, i, x, y, s)
    grad_p = element_gradients(p)
    grad_phi = element_gradients(phi)
    ay = case.bundle.alpha_y[i](x, y, s)
    by_x, by_y = case.bundle.beta_y[i](x, y, s)
    gy = case.bundle.gamma_y[i](x, y, s)
    conv = np.empty(x.shape + (2,))
    conv[:, :, 0] = ay * grad_p[:, None, 0] + by_x + gy * grad_phi[:, None, 0]
    conv[:, :, 1] = ay * grad_p[:, None, 1] + by_y + gy * grad_phi[:, None, 1]
    matrix = assemble_weighted_stiffness(m, a, quad)
    matrix = matrix + assemble_convection(m, conv, quad)
    matrix = matrix + assemble_mass(m, case.bundle.g_y[i](x, y, s), quad)
    return matrix


def solve_np_given_phi(m: Mesh, case, i: int, phi: FeFunction,
                       initial_guess: FeFunction, cfg: SolverConfig | None = None,
                       log: list | None = None) -> FeFunction:
    """Damped Newton solve of species i's equation with ``phi`` frozen.

    ``log``, if given, collects the free-DOF residual norms including the
    initial one.  Homogeneous Dirichlet data is assumed for the species.
    """
    cfg = cfg or SolverConfig()
    quad = DEFAULT_QUADRATURE
    free = np.flatnonzero(~m.boundary_vertex_flags)
    p = initial_guess
    r = np_weak_residual(m, case, i, p, phi, quad)[free]
    rnorm = float(np.linalg.norm(r))
    if log is not None:
        log.append(rnorm)
    if rnorm <= cfg.newton_tol:
        return p
    for _ in range(cfg.newton_max_iter):
        jac = _np_jacobian(m, case, i, p, phi, quad)[free][:, free]
        delta = solve_sparse_direct(jac.tocsr(), -r)
        step = 1.0
        while True:
            coeffs = p.coefficients.copy()
            coeffs[free] += step * delta
            trial = FeFunction(m, coeffs)
            r_trial = np_weak_residual(m, case, i, trial, phi, quad)[free]
            rt = float(np.linalg.norm(r_trial))
            if rt < rnorm:
                break
            step *= 0.5
            if step < cfg.damping_min:
                raise RuntimeError(
                    "Newton line search for species %d stalled at residual %.3e"
                    % (i + 1, rnorm))
        p, r, rnorm = trial, r_trial, rt
        if log is not None:
            log.append(rnorm)
        if rnorm <= cfg.newton_tol:
            return p
    raise RuntimeError(
        "Newton for species %d did not converge in %d iterations "
        "(last residual %.3e)" % (i + 1, cfg.newton_max_iter, rnorm))


def transfer_state(state: CoupledState, new_mesh: Mesh) -> CoupledState:
    """Nodal transfer onto a refined mesh (midpoints average their edge)."""
    info = refinement_parentage(new_mesh)
    old_n = state.phi.mesh.n_vertices
    if info is None or info[0] != old_n:
        raise ValueError("new mesh is not a refinement of the state's mesh")
    _, ends = info

    def move(f: FeFunction) -> FeFunction:
        mid = 0.5 * (f.coefficients[ends[:, 0]] + f.coefficients[ends[:, 1]])
        return FeFunction(new_mesh, np.concatenate([f.coefficients, mid]))

    return CoupledState(phi=move(state.phi), p=tuple(move(p) for p in state.p))


def _relative_h1_update(new: FeFunction, old: FeFunction) -> float:
    diff = FeFunction(new.mesh, new.coefficients - old.coefficients)
    num = h1_norm(diff)
    den = h1_norm(new)
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def solve_coupled(m: Mesh, case, cfg: SolverConfig | None = None,
                  warm_start: CoupledState | None = None) -> CoupledState:
    """Gummel iteration for the coupled system.

    ``warm_start`` may live on ``m`` or on a mesh that ``m`` refines (the
    state is then transferred nodally).  On non-convergence the state is
    returned with ``converged`` False rather than raising.
    """
    cfg = cfg or SolverConfig()
    if warm_start is not None and warm_start.phi.mesh is not m:
        warm_start = transfer_state(warm_start, m)
    if warm_start is not None:
        phi = warm_start.phi
        p = list(warm_start.p)
    else:
        phi = interpolate(m, 0.0)
        p = [interpolate(m, 0.0) for _ in range(case.n_species)]

    log: list = []
    rows: list = []
    converged = False
    for sweep in range(1, cfg.gummel_max_iter + 1):
        new_phi = solve_poisson_given_p(m, case, p)
        updates = [_relative_h1_update(new_phi, phi)]
        rows.append((sweep, "phi", updates[-1]))
        phi = new_phi
        for i in range(case.n_species):
            newton_log: list = []
            p_new = solve_np_given_phi(m, case, i, phi, p[i], cfg, log=newton_log)
            rows.extend((sweep, "p%d_newton" % (i + 1), rn) for rn in newton_log)
            updates.append(_relative_h1_update(p_new, p[i]))
            rows.append((sweep, "p%d" % (i + 1), updates[-1]))
            p[i] = p_new
        log.append(max(updates))
        if log[-1] <= cfg.gummel_tol:
            converged = True
            break
    return CoupledState(phi=phi, p=tuple(p), convergence_log=log,
                        detail_rows=rows, converged=converged)


def coupled_residual_norms(m: Mesh, case, state: CoupledState, quad=None):
    """Free-DOF weak-residual norms of the coupled system at ``state``."""
    quad = quad or DEFAULT_QUADRATURE
    free = np.flatnonzero(~m.boundary_vertex_flags)
    matrix = assemble_weighted_stiffness(m, case.bundle.epsilon, quad)
    x, y = quadrature_points(m, quad)
    src = np.broadcast_to(
        np.asarray(case.bundle.f(x, y), dtype=np.float64), x.shape).copy()
    for q, p_i in zip(case.bundle.charges, state.p):
        src += q * sample_values(p_i, quad)
    res_phi = matrix @ state.phi.coefficients - assemble_load(m, src, quad)
    res_p = [np_weak_residual(m, case, i, state.p[i], state.phi, quad)[free]
             for i in range(case.n_species)]
    return (float(np.linalg.norm(res_phi[free])),
            tuple(float(np.linalg.norm(r)) for r in res_p))
