"""Independent oracles, frozen before the code they check.

Nothing here imports diffconv.  Residuals are computed from plain Python
callables by central differences, and the derived constants below were
worked out by hand.
"""

import math

import numpy as np

# [Q1,Q2] = Q1 and [Q3,Q4] = Q3, everything else zero (both parent algebras)
STRUCTURE_2A21 = {(0, 1): (1.0, 0.0, 0.0, 0.0), (2, 3): (0.0, 0.0, 1.0, 0.0)}

# second profile of the quadratic-in-t ansatz: p0'' = (6/x^2) p0 has roots x^-2 and x^3
KING_OFFSET_EXPONENTS = (-2, 3)

# 1.2a matched from (e^{3x}, u^2, u^5): the x-scale is 3, so the basis is (1/9) dt, t dt + (1/3) dx
MATCH_12A_SCALE = 3.0


def d1(fn, x, h=1e-4):
    """Richardson-extrapolated central first derivative."""
    a = (fn(x + h) - fn(x - h)) / (2 * h)
    b = (fn(x + h / 2) - fn(x - h / 2)) / h
    return (4 * b - a) / 3


def d2(fn, x, h=1e-3):
    a = (fn(x + h) - 2 * fn(x) + fn(x - h)) / h**2
    b = (fn(x + h / 2) - 2 * fn(x) + fn(x - h / 2)) / (h / 2) ** 2
    return (4 * b - a) / 3


def pde_residual(f, D, K, u, t, x):
    """f u_t - (D(u) u_x)_x - K(u) u_x for callables, by finite differences only."""
    ut = d1(lambda s: u(s, x), t)
    ux = d1(lambda s: u(t, s), x)
    flux = lambda s: D(u(t, s)) * d1(lambda r: u(t, r), s)  # noqa: E731
    return f(x) * ut - d1(flux, x, 1e-3) - K(u(t, x)) * ux


def residual_scale(f, D, K, u, t, x):
    """Magnitude of the largest term, for relative tolerances."""
    ut = d1(lambda s: u(s, x), t)
    ux = d1(lambda s: u(t, s), x)
    uxx = d2(lambda s: u(t, s), x)
    v = u(t, x)
    return 1 + max(abs(f(x) * ut), abs(D(v) * uxx), abs(K(v) * ux))


# hand-written solutions: (f, D, K, u) callables on t, x in [0.5, 2]
HAND_SOLUTIONS = {
    "ln|c1 x + c0| on (1, e^u, 0)": (
        lambda x: 1.0, math.exp, lambda u: 0.0, lambda t, x: math.log(abs(1.0 * x + 2.0))),
    "2t/((x+c1)^2 + c0 t^2) on (1, 1/u, 0)": (
        lambda x: 1.0, lambda u: 1 / u, lambda u: 0.0, lambda t, x: 2 * t / ((x + 0.5) ** 2 + 1.5 * t**2)),
    "(6t/x^2 + c1/x^2 + c2 x^3)^2 on (1, u^-1/2, 0)": (
        lambda x: 1.0, lambda u: u**-0.5, lambda u: 0.0,
        lambda t, x: (6 * t / x**2 + 1.0 / x**2 + 0.02 * x**3) ** 2),
}


def fd_jacobi(bracket, a, b, c):
    """Cyclic sum for the Jacobi identity, given a bracket on opaque objects."""
    return bracket(a, bracket(b, c)), bracket(b, bracket(c, a)), bracket(c, bracket(a, b))


def random_box_points(n, seed, box=((0.5, 2.0), (0.5, 2.0))):
    rng = np.random.default_rng(seed)
    return [tuple(rng.uniform(lo, hi) for lo, hi in box) for _ in range(n)]
