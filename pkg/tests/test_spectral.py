import numpy as np
import pytest
import scipy.sparse as sp

from thinspec import disc, model, spectral


def test_diagonal_example():
    rep = spectral.eigs_near(sp.diags([1.0, 3.0]).tocsr(), 0.9, 1)
    assert rep.eigenvalues[0] == pytest.approx(1)
    np.testing.assert_allclose(np.abs(rep.pairs[0].vector), [1, 0], atol=1e-14)


def test_pairs_sorted_by_distance():
    A = sp.diags(np.arange(1.0, 31.0)).tocsr()
    rep = spectral.eigs_near(A, 10.2, 5, method="arpack")
    d = np.abs(rep.eigenvalues - 10.2)
    assert np.all(np.diff(d) >= 0)
    np.testing.assert_allclose(np.sort(rep.eigenvalues.real), [8, 9, 10, 11, 12])


def test_free_perturbed_oracle():
    X = 12
    cs = model.catalog("free", {"alpha0": 1.0})
    g = disc.build_grid(X, 201, 0.1, 9)
    M = disc.assemble_perturbed(cs, g)
    exact = (np.pi / (2 * X)) ** 2 + 1
    rep = spectral.eigs_near(M, exact, 1)
    lam = rep.eigenvalues[0]
    assert abs(lam.imag) < 1e-10
    assert abs(lam - exact) < 2 * g.hx ** 2


def test_hermitian_limiting_real():
    for name in model.CATALOG_NAMES:
        rep = spectral.eigs_near(disc.limiting_operator(model.catalog(name), 12, 201), -0.5, 3)
        assert np.all(np.abs(rep.eigenvalues.imag) <= 1e-10)


def _test_matrices():
    rng = np.random.default_rng(7)
    mats = []
    for name in model.CATALOG_NAMES:
        cs = model.catalog(name)
        mats.append((disc.assemble_perturbed(cs, disc.build_grid(8, 42, 0.1, 15)), -0.7))
        mats.append((disc.limiting_operator(cs, 8, 501), -0.7))
    n = 200
    B = sp.random(n, n, density=0.03, random_state=3) + sp.diags(np.arange(n, dtype=float))
    mats.append((B.tocsr().astype(complex) + 1j * sp.diags(rng.standard_normal(n) * 0.1), 20.3 + 0.1j))
    return mats


def test_arpack_matches_dense():
    for M, sigma in _test_matrices():
        A = M.matrix if hasattr(M, "matrix") else M
        assert A.shape[0] <= 600
        a = spectral.eigs_near(M, sigma, 3, method="arpack").eigenvalues
        d = spectral.eigs_near(M, sigma, 3, method="dense").eigenvalues
        np.testing.assert_allclose(a, d, atol=1e-8, rtol=0)


def test_singular_shift_reported():
    with pytest.raises(spectral.NumericalError, match="perturb"):
        spectral.eigs_near(sp.diags(np.arange(1.0, 40.0)).tocsr(), 3.0, 1, method="arpack")


def test_solve_linear_examples():
    f = np.arange(1.0, 6.0)
    np.testing.assert_allclose(spectral.solve_linear(sp.identity(5), 0.0, f), f)
    np.testing.assert_allclose(spectral.solve_linear(sp.diags([2.0]), 1.0, [1.0]), [1.0])
    rng = np.random.default_rng(0)
    A = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    lam = np.max(np.sum(np.abs(A), axis=1)) + 5  # outside all Gershgorin disks
    f = rng.standard_normal(30)
    u = spectral.solve_linear(sp.csr_matrix(A), lam, f)
    assert np.linalg.norm((A - lam * np.eye(30)) @ u - f) <= 1e-10 * np.linalg.norm(f)


def test_solve_linear_ill_conditioned():
    with pytest.raises(spectral.NumericalError, match="cond"):
        spectral.solve_linear(sp.diags([1.0, 2.0, 3.0]).tocsr(), 2.0 + 1e-15, np.ones(3))


def test_pt_normalize_free_ground_state():
    g = disc.build_grid(12, 201, 0.1, 9)
    M = disc.assemble_perturbed(model.catalog("free", {"alpha0": 1.0}), g)
    rep = spectral.eigs_near(M, (np.pi / 24) ** 2 + 1, 1)
    assert abs(rep.pairs[0].pt_norm) > 0.5
    out = spectral.pt_normalize(rep.pairs, M.reflection)
    assert abs(out[0].pt_norm - 1) < 1e-10
    again = spectral.pt_normalize(out, M.reflection)
    assert np.linalg.norm(again[0].vector - out[0].vector) <= 1e-10


def test_pt_normalize_identity_reflection():
    A = np.diag([1.0, 2.0, 5.0])
    rep = spectral.eigs_near(sp.csr_matrix(A), 1.4, 2, method="dense")
    P = np.arange(3)
    pairs = [spectral.EigenPair(p.lam, 3 * p.vector, p.residual) for p in rep.pairs]
    out = spectral.pt_normalize(pairs, P)
    G = spectral.pt_gram(out, P)
    np.testing.assert_allclose(G, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(out[0].vector), 1, rtol=1e-12)


def test_pt_normalize_self_orthogonal():
    v = np.array([1.0, 1j]) / np.sqrt(2)
    P = np.array([1, 0])
    pair = spectral.EigenPair(1.0, np.array([1.0, -1.0]) / np.sqrt(2), 0.0)
    with pytest.raises(spectral.DegeneracyError):
        spectral.pt_normalize([pair], P)


@pytest.mark.parametrize("name", model.CATALOG_NAMES)
def test_pt_normalize_catalog(name):
    g = disc.build_grid(12, 121, 0.1, 9)
    cs = model.catalog(name)
    M = disc.assemble_perturbed(cs, g)
    l0 = spectral.eigs_near(disc.limiting_operator(cs, 12, 121), -0.5, 1).eigenvalues[0].real
    rep = spectral.eigs_near(M, l0, 1)
    out = spectral.pt_normalize(rep.pairs, M.reflection)
    assert abs(out[0].pt_norm - 1) < 1e-10


def test_enclosure_examples():
    c = dict(c0=1.0, c1=0.0, c2=0.0, c3=2.0)
    assert spectral.enclosure_bound(4.0, **c) == pytest.approx(4.0)
    consts = model.HypothesisReport(c0=1.0, c1=0.0, c2=0.0, c3=2.0)
    assert spectral.enclosure_check([4 + 10j], consts) == [False]
    assert spectral.enclosure_check([4 + 3j], consts) == [True]


def test_seed_env(monkeypatch):
    monkeypatch.setenv("THINSPEC_SEED", "123")
    assert spectral.seed() == 123
    monkeypatch.delenv("THINSPEC_SEED")
    assert spectral.seed() == spectral.DEFAULT_SEED
