"""Coefficient model for the nonlinear steady drift-diffusion system.

The system couples n species concentrations p^i with a potential phi:

    -div( alpha^i(x, p^i) grad p^i + beta^i(x, p^i)
          + gamma^i(x, p^i) grad phi ) + g^i(x, p^i) = 0,
    -div( epsilon(x) grad phi ) - sum_i q^i p^i = f.

Coefficient callables take coordinate arrays plus (where applicable) the
state value: ``alpha(x, y, s)``; ``epsilon(x, y)`` and ``f(x, y)`` take
coordinates only.  Two manufactured test problems are built in, selected
by the ids "sech" (smooth) and "singular" (point singularity at the
origin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pnpafem.fem_core import ScalarField


def _zeros(x, y, s=None):
    return np.zeros(np.broadcast(x, y).shape)


def _zero_pair(x, y, s=None):
    z = np.zeros(np.broadcast(x, y).shape)
    return z, z


@dataclass(frozen=True)
class CoefficientBundle:
    """Per-species coefficient callables plus the Poisson data.

    ``alpha``, ``alpha_y``, ``beta``, ``beta_y``, ``gamma``, ``gamma_y``,
    ``g``, ``g_y`` are tuples with one callable per species; ``_y`` means
    the partial derivative in the state argument.  ``beta`` returns a
    component pair.  The optional ``*_x`` fields are spatial derivatives
    at frozen state (gradient for scalars, divergence for beta), needed
    by strong-form residuals; they default to zero, which is exact for
    both built-in cases.
    """

    charges: np.ndarray
    alpha: tuple
    alpha_y: tuple
    beta: tuple
    beta_y: tuple
    gamma: tuple
    gamma_y: tuple
    g: tuple
    g_y: tuple
    epsilon: object
    f: object
    alpha_grad_x: tuple = None
    beta_div_x: tuple = None
    gamma_grad_x: tuple = None
    epsilon_grad: object = _zero_pair

    def __post_init__(self):
        charges = np.asarray(self.charges, dtype=np.float64)
        object.__setattr__(self, "charges", charges)
        n = len(charges)
        for name in ("alpha", "alpha_y", "beta", "beta_y", "gamma", "gamma_y",
                     "g", "g_y"):
            if len(getattr(self, name)) != n:
                raise ValueError("%s must have one entry per species" % name)
        for name, fill in (("alpha_grad_x", _zero_pair),
                           ("beta_div_x", _zeros),
                           ("gamma_grad_x", _zero_pair)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, (fill,) * n)

    @property
    def n_species(self) -> int:
        return len(self.charges)


@dataclass(frozen=True)
class ManufacturedCase:
    """A coefficient bundle with known exact solution and closed-form sources.

    ``quad_degree`` is the quadrature degree used for error norms and
    indicator integrals (the singular case needs the higher-order rule,
    whose nodes also avoid the origin vertex).  ``phi_boundary`` is the
    Dirichlet trace for phi, None meaning homogeneous; the species are
    homogeneous in both built-in cases.  ``state_range`` brackets the
    solution values for which the diffusion coefficient is known a
    priori to stay positive.
    """

    name: str
    bundle: CoefficientBundle
    exact_phi: ScalarField
    exact_p: tuple
    sources_p: tuple
    phi_boundary: object = None
    quad_degree: int = 4
    state_range: tuple = None
    exclusion_radius: float = 0.0

    @property
    def n_species(self) -> int:
        return self.bundle.n_species


def make_sech2_case() -> ManufacturedCase:
    """Smooth two-species problem with state-dependent diffusion.

    alpha(x, s) = 1 - 2 s tanh(s) sech^2(s), drift gamma = q^i s, charges
    (+1, -1); exact solution phi = sin(pi x) sin(pi y), p^1 = sin(2 pi x)
    sin(2 pi y), p^2 = sin(3 pi x) sin(3 pi y), all vanishing on the
    boundary of the unit square.
    """
    charges = (1.0, -1.0)

    def alpha(x, y, s):
        sech2 = 1.0 / np.cosh(s) ** 2
        return 1.0 - 2.0 * s * np.tanh(s) * sech2

    def alpha_y(x, y, s):
        th = np.tanh(s)
        sech2 = 1.0 / np.cosh(s) ** 2
        return -2.0 * (th * sech2 + s * (sech2 ** 2 - 2.0 * th ** 2 * sech2))

    exact_phi = _sin_product(1, 1)
    exact_p = (_sin_product(2, 2), _sin_product(3, 3))

    def poisson_source(x, y):
        return (2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
                - exact_p[0].value(x, y) + exact_p[1].value(x, y))

    def np_source(i):
        q = charges[i]
        p = exact_p[i]

        def f_i(x, y):
            val = p.value(x, y)
            gx, gy = p.gradient(x, y)
            lap = p.laplacian(x, y)
            phix, phiy = exact_phi.gradient(x, y)
            phila = exact_phi.laplacian(x, y)
            diff = alpha_y(x, y, val) * (gx ** 2 + gy ** 2) + alpha(x, y, val) * lap
            drift = gx * phix + gy * phiy + val * phila
            return -diff - q * drift

        return f_i

    sources_p = (np_source(0), np_source(1))
    bundle = CoefficientBundle(
        charges=charges,
        alpha=(alpha, alpha),
        alpha_y=(alpha_y, alpha_y),
        beta=(_zero_pair, _zero_pair),
        beta_y=(_zero_pair, _zero_pair),
        gamma=tuple(_linear_drift(q) for q in charges),
        gamma_y=tuple(_constant_drift(q) for q in charges),
        g=tuple(_negated(src) for src in sources_p),
        g_y=(_zeros, _zeros),
        epsilon=lambda x, y: np.ones(np.broadcast(x, y).shape),
        f=poisson_source,
    )
    return ManufacturedCase(
        name="sech",
        bundle=bundle,
        exact_phi=exact_phi,
        exact_p=exact_p,
        sources_p=sources_p,
        quad_degree=4,
        state_range=(-1.5, 1.5),
    )


def make_singular_case() -> ManufacturedCase:
    """Two-species problem whose exact solution is singular at the origin.

    Exact phi = (x^2 + y^2)^0.1 (in H1 but with unbounded gradient at the
    origin), p^i = sin(k pi x) sin(k pi y) / (2 (x^2 + y^2)) with k = 2, 3;
    the p^i are bounded but direction-dependent at the origin and are
    assigned the value 0 there.  g(x, s) = s^3 - f_i, so the reaction is
    genuinely nonlinear.  phi has a nonzero boundary trace, used as exact
    Dirichlet data by the solver.
    """
    charges = (1.0, -1.0)
    exact_phi = _radial_power(0.1)
    exact_p = (_singular_species(2), _singular_species(3))

    def poisson_source(x, y):
        t = x ** 2 + y ** 2
        with np.errstate(divide="ignore"):
            lead = -0.04 * t ** -0.9
        return lead - exact_p[0].value(x, y) + exact_p[1].value(x, y)

    def np_source(i):
        q = charges[i]
        p = exact_p[i]

        def f_i(x, y):
            val = p.value(x, y)
            gx, gy = p.gradient(x, y)
            phix, phiy = exact_phi.gradient(x, y)
            drift = gx * phix + gy * phiy + val * exact_phi.laplacian(x, y)
            return -p.laplacian(x, y) - q * drift + val ** 3

        return f_i

    sources_p = (np_source(0), np_source(1))

    def g_fn(i):
        src = sources_p[i]
        return lambda x, y, s: s ** 3 - src(x, y)

    def one(x, y, s):
        return np.ones(np.broadcast(x, y).shape)

    bundle = CoefficientBundle(
        charges=charges,
        alpha=(one, one),
        alpha_y=(_zeros, _zeros),
        beta=(_zero_pair, _zero_pair),
        beta_y=(_zero_pair, _zero_pair),
        gamma=tuple(_linear_drift(q) for q in charges),
        gamma_y=tuple(_constant_drift(q) for q in charges),
        g=(g_fn(0), g_fn(1)),
        g_y=(lambda x, y, s: 3.0 * s ** 2,) * 2,
        epsilon=lambda x, y: np.ones(np.broadcast(x, y).shape),
        f=poisson_source,
    )
    return ManufacturedCase(
        name="singular",
        bundle=bundle,
        exact_phi=exact_phi,
        exact_p=exact_p,
        sources_p=sources_p,
        phi_boundary=exact_phi.value,
        quad_degree=10,
        exclusion_radius=1e-6,
    )


_CASES = {"sech": make_sech2_case, "singular": make_singular_case}


def get_case(name: str) -> ManufacturedCase:
    """Look up a built-in case by id ("sech" or "singular")."""
    try:
        return _CASES[name]()
    except KeyError:
        raise ValueError("unknown case %r; choose from %s" % (name, sorted(_CASES)))


def strong_residual(case: ManufacturedCase, x, y):
    """Pointwise residuals of the strong equations at the exact solution.

    Returns (list of per-species residual arrays, Poisson residual array).
    Points inside the case's exclusion ball around the origin are
    rejected; derivatives are the analytic ones carried by the bundle
    and the exact fields.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if case.exclusion_radius > 0.0:
        if np.any(x ** 2 + y ** 2 < case.exclusion_radius ** 2):
            raise ValueError("point inside the singular exclusion ball")
    b = case.bundle
    phi = case.exact_phi
    phival = phi.value(x, y)
    phix, phiy = phi.gradient(x, y)
    philap = phi.laplacian(x, y)

    residuals = []
    charge_density = np.zeros(np.broadcast(x, y).shape)
    for i in range(b.n_species):
        p = case.exact_p[i]
        val = p.value(x, y)
        gx, gy = p.gradient(x, y)
        lap = p.laplacian(x, y)
        ax, ay = b.alpha_grad_x[i](x, y, val)
        div_diff = (ax + b.alpha_y[i](x, y, val) * gx) * gx \
            + (ay + b.alpha_y[i](x, y, val) * gy) * gy \
            + b.alpha[i](x, y, val) * lap
        bx, by = b.beta_y[i](x, y, val)
        div_beta = b.beta_div_x[i](x, y, val) + bx * gx + by * gy
        cx, cy = b.gamma_grad_x[i](x, y, val)
        gam_y = b.gamma_y[i](x, y, val)
        div_drift = (cx + gam_y * gx) * phix + (cy + gam_y * gy) * phiy \
            + b.gamma[i](x, y, val) * philap
        residuals.append(-div_diff - div_beta - div_drift + b.g[i](x, y, val))
        charge_density = charge_density + b.charges[i] * val

    ex, ey = b.epsilon_grad(x, y)
    poisson = -(ex * phix + ey * phiy + b.epsilon(x, y) * philap) \
        - charge_density - b.f(x, y)
    return residuals, poisson


# ---------------------------------------------------------------------------
# exact-solution building blocks
# ---------------------------------------------------------------------------

def _sin_product(kx: int, ky: int) -> ScalarField:
    ax, ay = kx * np.pi, ky * np.pi

    def value(x, y):
        return np.sin(ax * x) * np.sin(ay * y)

    def gradient(x, y):
        return (ax * np.cos(ax * x) * np.sin(ay * y),
                ay * np.sin(ax * x) * np.cos(ay * y))

    def laplacian(x, y):
        return -(ax ** 2 + ay ** 2) * value(x, y)

    return ScalarField(value, gradient, laplacian)


def _radial_power(a: float) -> ScalarField:
    # (x^2 + y^2)^a; gradient and Laplacian blow up at the origin, where
    # callers are expected never to sample
    def value(x, y):
        return (x ** 2 + y ** 2) ** a

    def gradient(x, y):
        t = x ** 2 + y ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            s = 2.0 * a * t ** (a - 1.0)
        return s * x, s * y

    def laplacian(x, y):
        t = x ** 2 + y ** 2
        with np.errstate(divide="ignore"):
            return 4.0 * a ** 2 * t ** (a - 1.0)

    return ScalarField(value, gradient, laplacian)


def _singular_species(k: int) -> ScalarField:
    # sin(k pi x) sin(k pi y) / (2 (x^2 + y^2)), set to 0 at the origin
    w = k * np.pi

    def parts(x, y):
        s = np.sin(w * x) * np.sin(w * y)
        sx = w * np.cos(w * x) * np.sin(w * y)
        sy = w * np.sin(w * x) * np.cos(w * y)
        return s, sx, sy

    def value(x, y):
        t = x ** 2 + y ** 2
        s = np.sin(w * x) * np.sin(w * y)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = s / (2.0 * t)
        return np.where(t == 0.0, 0.0, out)

    def gradient(x, y):
        t = x ** 2 + y ** 2
        s, sx, sy = parts(x, y)
        with np.errstate(invalid="ignore", divide="ignore"):
            gx = sx / (2.0 * t) - s * x / t ** 2
            gy = sy / (2.0 * t) - s * y / t ** 2
        return gx, gy

    def laplacian(x, y):
        t = x ** 2 + y ** 2
        s, sx, sy = parts(x, y)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (-2.0 * w ** 2 * s / (2.0 * t)
                    - 2.0 * (sx * x + sy * y) / t ** 2
                    + 2.0 * s / t ** 2)

    return ScalarField(value, gradient, laplacian)


def _linear_drift(q: float):
    return lambda x, y, s: q * s


def _constant_drift(q: float):
    return lambda x, y, s: np.full(np.broadcast(x, y).shape, q)


def _negated(src):
    return lambda x, y, s: -src(x, y)
