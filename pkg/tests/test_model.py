import numpy as np
import pytest

from thinspec import model
from conftest import mutant


def test_catalog_free():
    cs = model.catalog("free", {"alpha0": 1})
    assert cs.sources()["A11"] == "1.0" and cs.sources()["A12"] == "0.0"
    np.testing.assert_array_equal(cs.points("alpha", [0.0, 3.0]), [1, 1])


def test_catalog_errors():
    with pytest.raises(KeyError):
        model.catalog("nope")
    with pytest.raises(KeyError):
        model.catalog("free", {"c12": 1.0})


@pytest.mark.parametrize("name", model.CATALOG_NAMES)
def test_catalog_passes_symmetry(name):
    rep = model.validate_symmetry(model.catalog(name))
    assert rep.ok
    assert max(rep.max_violation.values()) <= 1e-12


def test_free_violations_zero():
    rep = model.validate_symmetry(model.catalog("free"))
    assert max(rep.max_violation.values()) == 0


def test_mutant_flagged():
    rep = model.validate_symmetry(mutant())
    assert not rep.ok
    assert rep.max_violation["A12 odd"] == pytest.approx(0.5)


def test_constants_examples():
    r = model.estimate_constants(model.catalog("free", {"alpha0": 1}))
    assert (r.c0, r.c1, r.c2, r.c3) == (1, 0, 0, 2)
    r = model.estimate_constants(model.catalog("pt_well", {"alpha0": 1}))
    assert r.c2 == pytest.approx(2) and r.c3 == 2
    r = model.estimate_constants(model.catalog("shear", {"c12": 1}))
    assert r.c0 == pytest.approx(0.5, abs=1e-14)


def test_c0_monotone_under_refinement():
    cs = model.from_strings({"A12": "0.9*xi*cos(x)"}, {})
    c = [model.estimate_constants(cs, nx=n, nxi=n).c0 for n in (5, 9, 17, 33)]
    assert all(b <= a + 1e-15 for a, b in zip(c, c[1:]))


def test_ellipticity_failure_names_point():
    cs = model.from_strings({"A11": "xi"}, {})
    with pytest.raises(model.HypothesisError, match="x="):
        model.estimate_constants(cs)


def test_unknown_coefficient_name():
    with pytest.raises(KeyError):
        model.from_strings({"A33": "1"})
