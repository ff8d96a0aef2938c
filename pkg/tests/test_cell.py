import numpy as np
import pytest

from thinspec import cell, model
from thinspec.cell import QuadRule


def test_quadrature_exactness():
    q = QuadRule()
    assert abs(q.weights.sum() - 1) < 1e-15
    for d in range(16):
        exact = 0.0 if d % 2 else 0.5 ** d / (d + 1)
        assert abs(q.integrate(q.nodes ** d) - exact) < 1e-13
    # cumulative integral of xi^3 from -1/2
    np.testing.assert_allclose(q.cumulative(q.nodes ** 3), (q.nodes ** 4 - 1 / 16) / 4, atol=1e-14)


def test_limiting_examples():
    xs = np.array([-1.0, 0.0, 2.0])
    lc = cell.limiting_coefficients(model.catalog("free", {"alpha0": 1}), xs)
    np.testing.assert_allclose(lc.A11, 1, atol=1e-14)
    np.testing.assert_allclose(lc.A1, 0, atol=1e-14)
    np.testing.assert_allclose(lc.A00, 1, atol=1e-14)
    lc = cell.limiting_coefficients(model.catalog("shear", {"c12": 1, "alpha0": 0}), xs)
    np.testing.assert_allclose(lc.A11, 11 / 12, atol=1e-14)
    lc = cell.limiting_coefficients(model.catalog("pt_well", {"alpha0": 1}), [0.0])
    assert abs(lc.A00[0] + 1) < 1e-14


@pytest.mark.parametrize("name", model.CATALOG_NAMES)
def test_b_consistency(name):
    cs = model.catalog(name)
    q = QuadRule()
    xs = np.linspace(-3, 3, 7)
    lc = cell.limiting_coefficients(cs, xs, q)
    B11, B1, B0 = cell.b_integrands(cs, xs, q.nodes)
    np.testing.assert_allclose(q.integrate(B11), lc.A11, atol=1e-12)
    np.testing.assert_allclose(q.integrate(B1), lc.A1, atol=1e-12)
    np.testing.assert_allclose(q.integrate(B0), lc.A00, atol=1e-12)
    assert np.all(np.abs(lc.A00.imag) < 1e-13)


def test_b_examples():
    b11, b1, b0 = cell.b_coefficients(model.catalog("free", {"alpha0": 1.5}), 0.3, 0.2)
    assert b11 == pytest.approx(1) and b0 == pytest.approx(2.25)
    b11, _, _ = cell.b_coefficients(model.catalog("shear", {"c12": 1}), 0.0, 0.5)
    assert b11 == pytest.approx(0.75)


def test_cell_solve_oracle():
    q = QuadRule()
    s = cell.cell_solve(np.ones(q.size), np.cos(2 * np.pi * q.nodes), 0.0, 0.0, q)
    np.testing.assert_allclose(s.phi, -np.cos(2 * np.pi * q.nodes) / (4 * np.pi ** 2), atol=1e-10)
    assert abs(q.integrate(s.phi)) < 1e-12
    z = cell.cell_solve(np.ones(q.size), np.zeros(q.size), 0.0, 0.0, q)
    assert np.all(z.phi == 0)


def test_cell_solve_solvability():
    q = QuadRule()
    with pytest.raises(cell.SolvabilityError):
        cell.cell_solve(np.ones(q.size), np.ones(q.size), 0.0, 0.0, q)
    with pytest.raises(cell.SolvabilityError):
        cell.cell_solve(np.ones(q.size), np.zeros(q.size), 2e-10, 0.0, q)
    cell.cell_solve(np.ones(q.size), np.zeros(q.size), 5e-11, 0.0, q)


def _cell_data(q):
    xi = q.nodes
    Ann = 1.5 + 0.4 * np.cos(2 * np.pi * xi)
    F = np.exp(xi) + 1j * xi ** 3
    gp = 0.2 - 0.1j
    gm = complex(q.integrate(F)) + gp
    return Ann, F, gm, gp


def test_cell_ode_residual_and_flux():
    # strong-form residual by differentiating the tabulated phi twice; the
    # per-panel differentiation needs a high-order rule to resolve 1e-8
    q = QuadRule(8, 16)
    Ann, F, gm, gp = _cell_data(q)
    s = cell.cell_solve(Ann, F, gm, gp, q)
    resid = -q.differentiate(Ann * q.differentiate(s.phi)) + F
    assert np.max(np.abs(resid)) < 1e-8
    assert abs(q.interp(s.flux, [-0.5])[0] + gm) < 1e-8
    assert abs(q.interp(s.flux, [0.5])[0] + gp) < 1e-8
    assert abs(q.integrate(s.phi)) < 1e-12


def test_cell_default_rule_matches_reference():
    t = np.linspace(-0.5, 0.5, 11)
    vals = []
    for q in (QuadRule(), QuadRule(16, 16)):
        s = cell.cell_solve(*_cell_data(q), q)
        assert abs(q.integrate(s.phi)) < 1e-12
        vals.append(q.interp(s.phi, t))
    assert np.max(np.abs(vals[0] - vals[1])) < 1e-8


def test_cell_profiles_examples():
    q = QuadRule()
    a = 0.7
    p = cell.cell_profiles(model.catalog("free", {"alpha0": a}), [0.0, 1.0], q)
    np.testing.assert_allclose(p.G0, -1j * a * q.nodes[None, :] * np.ones((2, 1)), atol=1e-13)
    np.testing.assert_allclose(p.Gj, 0, atol=1e-15)
    c = 1.3
    p = cell.cell_profiles(model.catalog("shear", {"c12": c}), [0.5], q)
    np.testing.assert_allclose(p.Gj[0, 0], -c * q.nodes ** 2 / 2 + c / 24, atol=1e-13)
    for name in model.CATALOG_NAMES:
        p = cell.cell_profiles(model.catalog(name), np.linspace(-2, 2, 5), q)
        assert np.max(np.abs(q.integrate(p.G0))) < 1e-12
        assert np.max(np.abs(q.integrate(p.Gj))) < 1e-12


def test_w_profile_examples():
    q = QuadRule()
    w = cell.w_profile(model.catalog("free", {"alpha0": 1}), 1.0, 0.0, 0.0, q)
    np.testing.assert_allclose(w[0], -1j * q.nodes, atol=1e-13)
    w = cell.w_profile(model.catalog("shear"), 0.0, 0.0, 0.0, q)
    assert np.all(w == 0)
    c = 0.8
    w = cell.w_profile(model.catalog("shear", {"c12": c}), 0.0, 1.0, 0.0, q)
    np.testing.assert_allclose(w[0], -c * q.nodes ** 2 / 2, atol=1e-13)


def test_ellipticity_error():
    cs = model.from_strings({"A22": "xi"}, {})
    with pytest.raises(model.HypothesisError, match="x="):
        cell.limiting_coefficients(cs, [0.0])
