import numpy as np
import pytest
import scipy.sparse as sp

from thinspec import asymptote as asy
from thinspec import cell, converge, disc, model
from thinspec.cell import SolvabilityError

EPS = [0.2, 0.1, 0.05, 0.025]


@pytest.fixture(scope="module")
def shear():
    cs = model.catalog("shear")
    return cs, asy.expand(cs, 12, 301, -1.0)


@pytest.fixture(scope="module")
def fullmix():
    cs = model.catalog("fullmix")
    return cs, asy.expand(cs, 12, 301, -1.0)


@pytest.fixture(scope="module")
def free():
    cs = model.catalog("free", {"alpha0": 1.0})
    return cs, asy.expand(cs, 12, 301, 0.5)


def test_t6_free(free):
    cs, ex = free
    ops = ex._ops
    phi = ex.phik[0]
    f = ops.T6(phi)
    np.testing.assert_allclose(f, -1j * ops.q.nodes[None, :] * phi[:, None], atol=1e-13)
    assert np.all(ops.T6(np.zeros_like(phi)) == 0)


@pytest.mark.parametrize("name", model.CATALOG_NAMES)
def test_t6_mean_zero(name):
    cs = model.catalog(name)
    ex = asy.expand(cs, 12, 121, -0.5, order=1)
    ops = ex._ops
    assert np.max(np.abs(ops.integrate(ops.T6(ex.phik[0])))) < 1e-10


def test_t6_apply_matches_profiles():
    cs = model.catalog("shear")
    xs = np.linspace(-2, 2, 9)
    prof = cell.cell_profiles(cs, xs)
    phi = np.exp(-xs ** 2)
    dphi = -2 * xs * phi
    out = asy.t6_apply(phi, dphi, prof.Gj, prof.G0)
    np.testing.assert_allclose(out, prof.Gj[0] * dphi[:, None] + prof.G0 * phi[:, None], atol=1e-15)


def test_free_corrections_vanish(free):
    cs, ex = free
    assert ex.m == 1
    assert abs(ex.Lambda1[0]) <= 1e-6
    assert abs(ex.Lambda2[0]) <= 1e-6


def test_L_hermitian_and_real_lambda1(shear, fullmix):
    for cs, ex in (shear, fullmix):
        assert ex.m == 1
        assert ex.hermiticity <= 1e-8
        assert np.all(np.isreal(ex.Lambda1))


def test_psi_orthogonal(shear, fullmix):
    for cs, ex in (shear, fullmix):
        hx = ex._ops.co.hx
        for k in range(ex.m):
            for s in range(ex.m):
                assert abs(asy.inner(ex.Psi1[k], ex.phik[s], hx)) <= 1e-10


def test_first_order_solvability(shear, fullmix):
    for cs, ex in (shear, fullmix):
        hx = ex._ops.co.hx
        for k in range(ex.m):
            r = ex._h[k] + ex.Lambda1[k] * ex.phik[k]
            proj = [abs(asy.inner(r, ex.phik[s], hx)) for s in range(ex.m)]
            assert max(proj) <= 1e-8


def test_lambda2_two_routes_agree(shear, fullmix):
    for cs, ex in (shear, fullmix):
        np.testing.assert_allclose(ex.Lambda2, ex.Lambda2_direct, atol=1e-10)
        assert np.all(np.abs(np.imag(ex.Lambda2)) < 1e-10)


def test_lambda1_quadrature_invariance():
    cs = model.catalog("fullmix")
    a = asy.expand(cs, 12, 201, -1.0, order=1).Lambda1
    b = asy.expand(cs, 12, 201, -1.0, cell.QuadRule(16, 8), order=1).Lambda1
    assert np.max(np.abs(a - b)) <= 1e-8


def _diag_operator(d):
    n = len(d)
    xs = np.arange(n + 2, dtype=float)
    return disc.DiscreteOperator(sp.diags(d).tocsr().astype(complex), "limiting", xs, np.arange(n), np.ones(n))


def test_solve_reduced_examples():
    M0 = _diag_operator([0.0, 2.0])
    phi = np.array([[0.0, 1.0, 0.0, 0.0]])
    np.testing.assert_allclose(asy.solve_reduced(M0, 0.0, phi, [0, 0, 1, 0]), [0, 0, 0.5, 0], atol=1e-15)
    np.testing.assert_array_equal(asy.solve_reduced(M0, 0.0, phi, np.zeros(4)), 0)
    with pytest.raises(SolvabilityError):
        asy.solve_reduced(M0, 0.0, phi, phi[0])


def test_m1_no_b_terms(shear):
    cs, ex = shear
    assert ex.b1.shape == (1, 1) and ex.b1[0, 0] == 0


def test_lambda2_eigenvalue_remainder(shear):
    # lambda_eps - lambda0 - eps^2 Lambda2 after removing the O(h_xi^2)
    # transverse floor by extrapolation in Nt
    cs, ex = shear
    eps = [0.2, 0.1, 0.05]
    d = {}
    for Nt in (17, 33):
        tab = converge.sweep_eigenvalue(cs, eps, Nx=301, Nt=Nt, expansion=ex, floor_guard=False)
        d[Nt] = tab.values - tab.meta["lambda0"]
    e = np.array(eps)
    rem = np.abs((4 * d[33] - d[17]) / 3 - e * ex.Lambda1[0] - e ** 2 * ex.Lambda2[0])
    assert converge.fit_rate(e, rem)[0] >= 2.7


def test_residual_free_orders(free):
    cs, ex = free
    r = {N: converge.sweep_residual(ex, cs, N, EPS, Nt=65) for N in (1, 2, 3)}
    # N = 1 leaves an O(1) remainder, as the estimate eps^(N-1) predicts
    assert abs(r[1].fitted_rate) < 0.1 and np.all(r[1].values < 2)
    assert r[2].fitted_rate >= 0.9
    assert r[3].fitted_rate >= 1.8


def test_residual_shear_n3(shear):
    cs, ex = shear
    tab = converge.sweep_residual(ex, cs, 3, EPS, Nt=129)
    assert tab.status == "ok" and tab.fitted_rate >= 1.8


def test_residual_plateaus_under_grid_refinement(shear):
    cs, ex = shear
    r = [asy.residual_check(ex, cs, disc.build_grid(12, 301, 0.2, Nt), 2) for Nt in (65, 129)]
    assert r[1] > 0.5 * r[0] and r[1] > 1e-3


def test_residual_grid_mismatch(shear):
    cs, ex = shear
    with pytest.raises(ValueError):
        asy.residual_check(ex, cs, disc.build_grid(12, 201, 0.1, 17), 2)
    with pytest.raises(ValueError):
        asy.residual_check(ex, cs, disc.build_grid(12, 301, 0.1, 17), 4)


def test_summary_rows(shear):
    cs, ex = shear
    rows = list(ex.rows())
    assert len(rows) == 1 and rows[0][5] == 0
