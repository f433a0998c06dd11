"""Benchmark problems: manufactured square and annulus solutions, lid-driven cavity."""

from __future__ import annotations

from dataclasses import dataclass
from collections.abc import Callable
from functools import lru_cache

import numpy as np
import numpy.typing as npt
from numpy.polynomial import Polynomial

from .geometry import GeometricMap, map_nurbs_annulus, map_polar_annulus, map_square

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class ExactSolution:
    velocity: Callable[[FloatArray], FloatArray]  # (N, 2) -> (N, 2)
    velocity_grad: Callable[[FloatArray], FloatArray]  # (N, 2) -> (N, 2, 2), [a, b] = du_a/dx_b
    pressure: Callable[[FloatArray], FloatArray]  # (N, 2) -> (N,)
    body_force: Callable[[FloatArray], FloatArray]  # (N, 2) -> (N, 2)


@dataclass(frozen=True)
class Case:
    name: str
    gmap: GeometricMap
    nu: float
    exact: ExactSolution | None = None
    dirichlet: Callable[[FloatArray, str], FloatArray] | None = None

    @property
    def body_force(self):
        return None if self.exact is None else self.exact.body_force


class _ExpPoly:
    """f(x) = exp(x) P(x) with all derivatives, via (e^x P)' = e^x (P + P')."""

    def __init__(self, coef):
        self.ders = [Polynomial(coef)]
        for _ in range(3):
            q = self.ders[-1]
            self.ders.append(q + q.deriv())

    def __call__(self, x, k=0):
        return np.exp(x) * self.ders[k](x)


def case_square(nu: float = 1.0) -> Case:
    """Manufactured solution on the unit square, zero velocity on the boundary.

    u = (a(x) b'(y), -a'(x) b(y)) with a = e^x x^2 (x-1)^2, b = y^2 (y-1)^2,
    i.e. the curl of the stream function a b.
    """
    a = _ExpPoly([0.0, 0.0, 1.0, -2.0, 1.0])
    b = [Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])]
    for _ in range(3):
        b.append(b[-1].deriv())
    # pressure: c0 - 456 s + e^x (s R0 + s^2 R1), s = y^2 - y
    c0 = -424.0 + 156.0 * np.e
    R0 = _ExpPoly([456.0, -456.0, 228.0, -72.0, 12.0])
    R1 = _ExpPoly([0.0, 2.0, -5.0, 2.0, 1.0])
    s_poly = Polynomial([0.0, -1.0, 1.0])

    def velocity(X):
        x, y = X[:, 0], X[:, 1]
        return np.stack([a(x) * b[1](y), -a(x, 1) * b[0](y)], axis=1)

    def velocity_grad(X):
        x, y = X[:, 0], X[:, 1]
        g = np.empty((X.shape[0], 2, 2))
        g[:, 0, 0] = a(x, 1) * b[1](y)
        g[:, 0, 1] = a(x) * b[2](y)
        g[:, 1, 0] = -a(x, 2) * b[0](y)
        g[:, 1, 1] = -a(x, 1) * b[1](y)
        return g

    def pressure(X):
        x, y = X[:, 0], X[:, 1]
        s = s_poly(y)
        return c0 - 456.0 * s + s * R0(x) + s**2 * R1(x)

    def body_force(X):
        x, y = X[:, 0], X[:, 1]
        s, ds = s_poly(y), s_poly.deriv()(y)
        lap1 = a(x, 2) * b[1](y) + a(x) * b[3](y)
        lap2 = -(a(x, 3) * b[0](y) + a(x, 1) * b[2](y))
        px = s * R0(x, 1) + s**2 * R1(x, 1)
        py = ds * (-456.0 + R0(x) + 2.0 * s * R1(x))
        return np.stack([-nu * lap1 + px, -nu * lap2 + py], axis=1)

    exact = ExactSolution(velocity, velocity_grad, pressure, body_force)
    return Case("square", map_square(), nu, exact=exact)


@lru_cache(maxsize=None)
def _annulus_functions():
    import sympy as sym

    x, y = sym.symbols("x y", real=True)
    r = sym.sqrt(x**2 + y**2)
    th = sym.atan2(y, x)
    psi = (r - 1) ** 2 * (r - 2) ** 2 * sym.sin(4 * th) ** 2
    u = [sym.diff(psi, y), -sym.diff(psi, x)]
    p = r**2 * sym.cos(4 * th)
    grad = [[sym.diff(ui, v) for v in (x, y)] for ui in u]
    lap = [sym.diff(ui, x, 2) + sym.diff(ui, y, 2) for ui in u]
    gp = [sym.diff(p, v) for v in (x, y)]
    nu = sym.Symbol("nu", positive=True)
    force = [-nu * lap[i] + gp[i] for i in range(2)]
    mods = "numpy"
    return (
        sym.lambdify((x, y), u, mods),
        sym.lambdify((x, y), grad, mods),
        sym.lambdify((x, y), p, mods),
        sym.lambdify((x, y, nu), force, mods),
    )


def _as_array(values, n: int) -> FloatArray:
    return np.asarray(np.broadcast_arrays(*[np.asarray(v, dtype=float) + np.zeros(n) for v in values]))


def case_annulus(parameterization: str = "nurbs", nu: float = 1.0) -> Case:
    """Manufactured solution on the 1/8 annulus 1 < r < 2, 0 < theta < pi/4.

    u is the curl of psi = (r-1)^2 (r-2)^2 sin^2(4 theta), which vanishes to
    second order on the whole boundary; p = r^2 cos(4 theta) has zero mean.
    """
    u_f, grad_f, p_f, f_f = _annulus_functions()
    gmap = {"nurbs": map_nurbs_annulus, "polar": map_polar_annulus}[parameterization]()

    def velocity(X):
        return _as_array(u_f(X[:, 0], X[:, 1]), X.shape[0]).T

    def velocity_grad(X):
        g = grad_f(X[:, 0], X[:, 1])
        n = X.shape[0]
        return np.stack([_as_array(row, n).T for row in g], axis=1)

    def pressure(X):
        return np.asarray(p_f(X[:, 0], X[:, 1]), dtype=float) + np.zeros(X.shape[0])

    def body_force(X):
        return _as_array(f_f(X[:, 0], X[:, 1], nu), X.shape[0]).T

    exact = ExactSolution(velocity, velocity_grad, pressure, body_force)
    return Case(f"annulus-{parameterization}", gmap, nu, exact=exact)


def case_cavity(nu: float = 1.0, lid_speed: float = 1.0) -> Case:
    """Lid-driven cavity: tangential velocity ``lid_speed`` on the top, no slip elsewhere."""

    def lid(X, side):
        g = np.zeros_like(X)
        if side == "top":
            g[:, 0] = lid_speed
        return g

    return Case("cavity", map_square(), nu, dirichlet=lid)


CASES = {
    "square": lambda nu=1.0: case_square(nu),
    "annulus-nurbs": lambda nu=1.0: case_annulus("nurbs", nu),
    "annulus-polar": lambda nu=1.0: case_annulus("polar", nu),
    "cavity": lambda nu=1.0: case_cavity(nu),
}
