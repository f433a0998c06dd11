import numpy as np
import pytest

from stokes_iga.cases import CASES
from stokes_iga.geometry import SIDES

rng = np.random.default_rng(7)
MANUFACTURED = ["square", "annulus-nurbs", "annulus-polar"]


def _interior_points(case, n=200):
    return case.gmap.evaluate(rng.uniform(0.02, 0.98, (n, 2)))


@pytest.mark.parametrize("name", MANUFACTURED)
def test_exact_velocity_is_divergence_free(name):
    case = CASES[name]()
    g = case.exact.velocity_grad(_interior_points(case))
    assert np.abs(g[:, 0, 0] + g[:, 1, 1]).max() < 1e-11


@pytest.mark.parametrize("name", MANUFACTURED)
def test_exact_velocity_vanishes_on_boundary(name):
    case = CASES[name]()
    t = np.linspace(0, 1, 41)
    for side in SIDES:
        fixed = 0.0 if side in ("left", "bottom") else 1.0
        xh = np.stack([t, np.full_like(t, fixed)] if side in ("bottom", "top") else [np.full_like(t, fixed), t], axis=1)
        assert np.abs(case.exact.velocity(case.gmap.evaluate(xh))).max() < 1e-12


@pytest.mark.parametrize("name", MANUFACTURED)
def test_gradient_matches_finite_differences(name):
    case = CASES[name]()
    X = _interior_points(case, 50)
    g = case.exact.velocity_grad(X)
    step = 1e-6
    for b in range(2):
        e = np.zeros(2)
        e[b] = step
        fd = (case.exact.velocity(X + e) - case.exact.velocity(X - e)) / (2 * step)
        assert np.abs(fd - g[:, :, b]).max() < 1e-6 * max(1.0, np.abs(g).max())


@pytest.mark.parametrize("name", MANUFACTURED)
@pytest.mark.parametrize("nu", [1.0, 0.01])
def test_body_force_balances_momentum(name, nu):
    # f = -nu Lap u + grad p for a divergence-free u, checked with finite differences
    case = CASES[name](nu)
    X = _interior_points(case, 40)
    h = 1e-4
    e = np.eye(2) * h
    vel, pres = case.exact.velocity, case.exact.pressure
    lap = sum(vel(X + e[b]) - 2 * vel(X) + vel(X - e[b]) for b in range(2)) / h**2
    gp = np.stack([(pres(X + e[b]) - pres(X - e[b])) / (2 * h) for b in range(2)], axis=1)
    f = case.exact.body_force(X)
    assert np.abs(f - (-nu * lap + gp)).max() < 1e-4 * max(1.0, np.abs(f).max())


@pytest.mark.parametrize("name", MANUFACTURED)
def test_exact_pressure_has_zero_mean(name):
    case = CASES[name]()
    x, w = np.polynomial.legendre.leggauss(40)
    x, w = (x + 1) / 2, w / 2
    S, T = np.meshgrid(x, x, indexing="ij")
    xh = np.stack([S.ravel(), T.ravel()], axis=1)
    W = np.outer(w, w).ravel() * case.gmap.det_jacobian(xh)
    assert abs(W @ case.exact.pressure(case.gmap.evaluate(xh))) < 1e-10


def test_cavity_lid_data():
    case = CASES["cavity"]()
    X = np.array([[0.3, 1.0], [0.7, 1.0]])
    np.testing.assert_array_equal(case.dirichlet(X, "top"), [[1, 0], [1, 0]])
    assert np.all(case.dirichlet(X, "left") == 0)
    assert case.exact is None and case.body_force is None
