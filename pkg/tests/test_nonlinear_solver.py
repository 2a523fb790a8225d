"""Coupled solver: sweep convergence, Newton behaviour, state transfer."""

from types import SimpleNamespace

import numpy as np
import pytest

from pnpafem.fem_core import h1_l2_errors, interpolate, quadrature_rule
from pnpafem.mesh import make_uniform_unit_square, refine_uniform
from pnpafem.nonlinear_solver import (
    CoupledState,
    SolverConfig,
    coupled_residual_norms,
    solve_coupled,
    solve_np_given_phi,
    transfer_state,
)
from pnpafem.pnp_problem import get_case

CASE = get_case("sech")
QUAD = quadrature_rule(4)


@pytest.fixture(scope="module")
def mesh8():
    return make_uniform_unit_square(8)


@pytest.fixture(scope="module")
def solved8(mesh8):
    return solve_coupled(mesh8, CASE)


@pytest.fixture(scope="module")
def mesh16(mesh8):
    return refine_uniform(mesh8)


@pytest.fixture(scope="module")
def solved16(mesh16):
    return solve_coupled(mesh16, CASE)


def test_config_validation():
    cfg = SolverConfig()
    assert cfg.gummel_tol == 1e-8 and cfg.newton_tol == 1e-10
    with pytest.raises(ValueError):
        SolverConfig(gummel_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(newton_tol=-1e-10)
    with pytest.raises(ValueError):
        SolverConfig(gummel_max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(newton_max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(damping_min=0.0)
    with pytest.raises(ValueError):
        SolverConfig(damping_min=2.0)


def test_sweeps_converge_and_contract(solved8):
    st = solved8
    assert st.converged
    log = st.convergence_log
    assert 1 <= len(log) <= 15
    assert log[-1] <= 1e-8
    assert all(b < a for a, b in zip(log, log[1:]))


def test_detail_rows_cover_all_unknowns(solved8):
    rows = solved8.detail_rows
    kinds = {kind for _, kind, _ in rows}
    assert kinds == {"phi", "p1", "p2", "p1_newton", "p2_newton"}
    sweeps = [s for s, _, _ in rows]
    assert sweeps == sorted(sweeps)
    assert all(np.isfinite(v) and v >= 0.0 for _, _, v in rows)


def test_residual_norms_small_at_convergence(mesh8, solved8):
    res_phi, res_p = coupled_residual_norms(mesh8, CASE, solved8)
    assert res_phi <= 10.0 * SolverConfig().gummel_tol
    for r in res_p:
        assert r <= 10.0 * SolverConfig().newton_tol


def test_resolve_from_fixed_point_is_stable(mesh8, solved8):
    again = solve_coupled(mesh8, CASE, warm_start=solved8)
    assert again.converged and len(again.convergence_log) == 1
    assert np.abs(again.phi.coefficients
                  - solved8.phi.coefficients).max() <= 1e-9
    for a, b in zip(again.p, solved8.p):
        assert np.abs(a.coefficients - b.coefficients).max() <= 1e-9


def test_h1_errors_halve_under_uniform_refinement(solved8, solved16):
    pairs = [(solved8.phi, solved16.phi, CASE.exact_phi)]
    pairs += [(a, b, ex) for a, b, ex in
              zip(solved8.p, solved16.p, CASE.exact_p)]
    for coarse, fine, exact in pairs:
        e_c = h1_l2_errors(coarse, exact, QUAD)[2]
        e_f = h1_l2_errors(fine, exact, QUAD)[2]
        assert 1.7 <= e_c / e_f <= 2.3


def test_warm_start_lowers_initial_update(mesh16, solved8, solved16):
    warm = solve_coupled(mesh16, CASE, warm_start=solved8)
    assert warm.converged
    assert len(warm.convergence_log) <= len(solved16.convergence_log)
    assert warm.convergence_log[0] < 0.5 * solved16.convergence_log[0]
    e_w = h1_l2_errors(warm.phi, CASE.exact_phi, QUAD)[2]
    e_c = h1_l2_errors(solved16.phi, CASE.exact_phi, QUAD)[2]
    assert e_w == pytest.approx(e_c, rel=1e-6)


def test_nonconvergence_is_reported_not_raised(mesh8):
    st = solve_coupled(mesh8, CASE, SolverConfig(gummel_max_iter=1))
    assert not st.converged
    assert len(st.convergence_log) == 1


def test_newton_quadratic_tail(mesh8):
    phi_h = interpolate(mesh8, lambda x, y: CASE.exact_phi.value(x, y))
    for guess in (interpolate(mesh8, lambda x, y: CASE.exact_p[0].value(x, y)),
                  interpolate(mesh8, 0.0)):
        log = []
        p = solve_np_given_phi(mesh8, CASE, 0, phi_h, guess, log=log)
        assert log[-1] <= 1e-10
        assert len(log) - 1 <= 8
        assert all(b < a for a, b in zip(log, log[1:]))
        assert log[-1] <= 10.0 * log[-2] ** 1.5
        assert p.mesh is mesh8


def test_newton_respects_iteration_cap(mesh8):
    phi_h = interpolate(mesh8, lambda x, y: CASE.exact_phi.value(x, y))
    with pytest.raises(RuntimeError):
        solve_np_given_phi(mesh8, CASE, 0, phi_h, interpolate(mesh8, 0.0),
                           SolverConfig(newton_tol=1e-14, newton_max_iter=2))


def test_transfer_state_is_nodal_midpoint_interpolation(mesh8, mesh16):
    lin = interpolate(mesh8, lambda x, y: 3.0 * x - 2.0 * y + 0.25)
    state = CoupledState(phi=lin, p=(lin, lin))
    moved = transfer_state(state, mesh16)
    assert moved.phi.mesh is mesh16
    expect = 3.0 * mesh16.vertices[:, 0] - 2.0 * mesh16.vertices[:, 1] + 0.25
    np.testing.assert_allclose(moved.phi.coefficients, expect, atol=1e-14)
    n_old = mesh8.n_vertices
    np.testing.assert_array_equal(moved.p[0].coefficients[:n_old],
                                  lin.coefficients)


def test_transfer_state_rejects_unrelated_mesh(mesh8):
    lin = interpolate(mesh8, 1.0)
    state = CoupledState(phi=lin, p=(lin, lin))
    with pytest.raises(ValueError):
        transfer_state(state, make_uniform_unit_square(16))


def test_diffusion_positivity_guard(mesh8):
    stub = SimpleNamespace(
        bundle=SimpleNamespace(alpha=(lambda x, y, s: s,)),
        state_range=None,
    )
    from pnpafem.nonlinear_solver import _alpha_samples
    x = np.array([[0.5]])
    y = np.array([[0.5]])
    with pytest.raises(ValueError, match="<= 0"):
        _alpha_samples(stub, 0, x, y, np.array([[-1.0]]))
    ok = _alpha_samples(stub, 0, x, y, np.array([[2.0]]))
    assert ok[0, 0] == 2.0
