"""Manufactured problems: coefficients, exact fields, source consistency."""

import numpy as np
import pytest

from pnpafem.pnp_problem import get_case, strong_residual


def sample_points(rng, n, exclusion=0.0):
    pts = rng.random((4 * n, 2))
    if exclusion > 0.0:
        keep = np.hypot(pts[:, 0], pts[:, 1]) >= exclusion * 2
        pts = pts[keep]
    return pts[:n, 0], pts[:n, 1]


def test_get_case_names():
    assert get_case("sech").name == "sech"
    assert get_case("singular").name == "singular"
    with pytest.raises(ValueError):
        get_case("nope")


def test_case_structure():
    for name, degree in (("sech", 4), ("singular", 10)):
        case = get_case(name)
        assert case.n_species == 2
        assert tuple(case.bundle.charges) == (1.0, -1.0)
        assert case.quad_degree == degree
    assert get_case("sech").phi_boundary is None
    assert get_case("singular").phi_boundary is not None
    assert get_case("singular").exclusion_radius > 0.0


def test_sech_exact_solution_values():
    case = get_case("sech")
    assert case.exact_phi.value(0.5, 0.5) == pytest.approx(1.0, abs=1e-15)
    assert case.exact_p[0].value(0.25, 0.25) == pytest.approx(1.0, abs=1e-15)
    # homogeneous Dirichlet traces
    t = np.linspace(0.0, 1.0, 17)
    for edge_x, edge_y in ((t, 0 * t), (t, 0 * t + 1), (0 * t, t), (0 * t + 1, t)):
        assert np.allclose(case.exact_phi.value(edge_x, edge_y), 0.0, atol=1e-13)
        for p in case.exact_p:
            assert np.allclose(p.value(edge_x, edge_y), 0.0, atol=1e-13)


def test_singular_exact_solution_values():
    case = get_case("singular")
    assert case.exact_phi.value(1.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert case.exact_phi.value(0.5, 0.5) == pytest.approx(0.5 ** 0.1, rel=1e-14)
    # species vanish at the singular point by convention and on the boundary
    for p in case.exact_p:
        assert p.value(0.0, 0.0) == 0.0
        t = np.linspace(0.0, 1.0, 9)[1:]
        assert np.allclose(p.value(t, 0.0 * t), 0.0, atol=1e-13)
        assert np.allclose(p.value(0.0 * t + 1.0, t), 0.0, atol=1e-13)
    # the potential trace on the boundary is the exact one, not zero
    assert case.phi_boundary(1.0, 1.0) == pytest.approx(2.0 ** 0.1, rel=1e-14)


def test_sech_poisson_source_formula():
    case = get_case("sech")
    rng = np.random.default_rng(5)
    x, y = sample_points(rng, 64)
    sinsin = np.sin(np.pi * x) * np.sin(np.pi * y)
    p1 = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    p2 = np.sin(3 * np.pi * x) * np.sin(3 * np.pi * y)
    expect = 2.0 * np.pi ** 2 * sinsin - p1 + p2
    assert np.allclose(case.bundle.f(x, y), expect, atol=1e-13)


def test_singular_poisson_source_formula():
    case = get_case("singular")
    rng = np.random.default_rng(6)
    x, y = sample_points(rng, 64, exclusion=case.exclusion_radius)
    t = x ** 2 + y ** 2
    p1 = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) / (2 * t)
    p2 = np.sin(3 * np.pi * x) * np.sin(3 * np.pi * y) / (2 * t)
    expect = -0.04 * t ** (-0.9) - p1 + p2
    assert np.allclose(case.bundle.f(x, y), expect, rtol=1e-13)


@pytest.mark.parametrize("name", ["sech", "singular"])
def test_coefficient_derivatives_match_finite_differences(name):
    case = get_case(name)
    b = case.bundle
    rng = np.random.default_rng(7)
    x, y = sample_points(rng, 32, exclusion=0.05)
    lo, hi = case.state_range or (-1.0, 1.0)
    s = rng.uniform(lo, hi, size=x.shape)
    eps = 1e-6
    for i in range(b.n_species):
        fd = (b.alpha[i](x, y, s + eps) - b.alpha[i](x, y, s - eps)) / (2 * eps)
        assert np.allclose(b.alpha_y[i](x, y, s), fd, atol=5e-8)
        fdg = (b.gamma[i](x, y, s + eps)[0] - b.gamma[i](x, y, s - eps)[0]) / (2 * eps), \
              (b.gamma[i](x, y, s + eps)[1] - b.gamma[i](x, y, s - eps)[1]) / (2 * eps)
        gy = b.gamma_y[i](x, y, s)
        assert np.allclose(gy[0], fdg[0], atol=5e-8)
        assert np.allclose(gy[1], fdg[1], atol=5e-8)
        fdgy = (b.g[i](x, y, s + eps) - b.g[i](x, y, s - eps)) / (2 * eps)
        assert np.allclose(b.g_y[i](x, y, s), fdgy, atol=5e-7)


def test_exact_gradients_match_finite_differences():
    for name in ("sech", "singular"):
        case = get_case(name)
        rng = np.random.default_rng(8)
        x, y = sample_points(rng, 32, exclusion=0.1)
        eps = 1e-7
        for field in (case.exact_phi, *case.exact_p):
            gx, gy = field.gradient(x, y)
            fx = (field.value(x + eps, y) - field.value(x - eps, y)) / (2 * eps)
            fy = (field.value(x, y + eps) - field.value(x, y - eps)) / (2 * eps)
            assert np.allclose(gx, fx, rtol=1e-5, atol=1e-6)
            assert np.allclose(gy, fy, rtol=1e-5, atol=1e-6)


def test_strong_residual_sech():
    case = get_case("sech")
    rng = np.random.default_rng(7)
    x, y = sample_points(rng, 1000)
    res_p, res_phi = strong_residual(case, x, y)
    assert np.max(np.abs(res_phi)) <= 1e-8
    for r in res_p:
        assert np.max(np.abs(r)) <= 1e-8


def test_strong_residual_singular_outside_exclusion():
    case = get_case("singular")
    rng = np.random.default_rng(7)
    pts = rng.random((4000, 2))
    keep = np.hypot(pts[:, 0], pts[:, 1]) >= case.exclusion_radius
    x, y = pts[keep][:1000].T
    res_p, res_phi = strong_residual(case, x, y)
    assert np.max(np.abs(res_phi)) <= 1e-8
    for r in res_p:
        assert np.max(np.abs(r)) <= 1e-8


def test_strong_residual_rejects_excluded_points():
    case = get_case("singular")
    with pytest.raises(ValueError):
        strong_residual(case, np.array([1e-8]), np.array([0.0]))


def test_epsilon_is_unit():
    for name in ("sech", "singular"):
        b = get_case(name).bundle
        x = np.array([0.3, 0.7])
        assert np.allclose(b.epsilon(x, x), 1.0)
