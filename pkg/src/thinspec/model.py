"""Coefficient sets, hypothesis checks and the built-in problem catalog.

All problems are posed for n = 2: one tangential variable ``x`` and the fast
transverse variable ``xi`` in [-1/2, 1/2].  Coefficients are stored as parsed
expressions and tabulated on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from . import coeffexpr as ce

COEFF_NAMES = ("A11", "A12", "A21", "A22", "A1", "A2", "A0", "alpha")


class HypothesisError(ValueError):
    """Symmetry or ellipticity hypothesis violated."""


@dataclass(frozen=True)
class CoefficientSet:
    n: int
    Aij: Tuple[Tuple[ce.Expr, ce.Expr], Tuple[ce.Expr, ce.Expr]]
    Aj: Tuple[ce.Expr, ce.Expr]
    A0: ce.Expr
    alpha: ce.Expr
    params: Dict[str, float] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        if self.n != 2:
            raise ValueError(f"model.CoefficientSet: only n=2 is supported, got n={self.n}")
        if "xi" in ce.free_names(self.alpha):
            raise ValueError("model.CoefficientSet: alpha must not depend on xi")
        for e in self.exprs().values():
            unknown = ce.free_names(e) - set(ce.VARIABLES) - set(self.params)
            if unknown:
                raise ValueError(f"model.CoefficientSet: unbound parameters {sorted(unknown)}")

    def exprs(self) -> Dict[str, ce.Expr]:
        return {
            "A11": self.Aij[0][0], "A12": self.Aij[0][1],
            "A21": self.Aij[1][0], "A22": self.Aij[1][1],
            "A1": self.Aj[0], "A2": self.Aj[1], "A0": self.A0, "alpha": self.alpha,
        }

    def expr(self, name: str) -> ce.Expr:
        return self.exprs()[name]

    def points(self, name: str, x, xi=0.0) -> np.ndarray:
        """Evaluate one coefficient at broadcast-compatible (x, xi)."""
        return ce.eval_points(self.expr(name), x, xi, self.params)

    def grid(self, name: str, xs, xis) -> np.ndarray:
        return ce.eval_grid(self.expr(name), xs, xis, self.params)

    def with_params(self, **updates) -> "CoefficientSet":
        unknown = set(updates) - set(self.params)
        if unknown:
            raise KeyError(f"model.with_params: undeclared parameters {sorted(unknown)}")
        p = dict(self.params)
        p.update({k: float(v) for k, v in updates.items()})
        return CoefficientSet(self.n, self.Aij, self.Aj, self.A0, self.alpha, p, self.name)

    def sources(self) -> Dict[str, str]:
        return {k: ce.to_string(v) for k, v in self.exprs().items()}


def from_strings(coeffs: Mapping[str, str], params: Mapping[str, float] = None,
                 name: str = "custom") -> CoefficientSet:
    """Build a coefficient set from expression strings.

    Missing entries default to the identity diffusion with no lower order
    terms; ``A21`` defaults to ``A12``.
    """
    params = {k: float(v) for k, v in (params or {}).items()}
    unknown = set(coeffs) - set(COEFF_NAMES)
    if unknown:
        raise KeyError(f"model.from_strings: unknown coefficient names {sorted(unknown)}")
    src = {"A11": "1", "A12": "0", "A22": "1", "A1": "0", "A2": "0", "A0": "0", "alpha": "0"}
    src.update(coeffs)
    src.setdefault("A21", src["A12"])
    e = {k: ce.parse(v, params) for k, v in src.items()}
    return CoefficientSet(2, ((e["A11"], e["A12"]), (e["A21"], e["A22"])),
                          (e["A1"], e["A2"]), e["A0"], e["alpha"], params, name)


_CATALOG = {
    "free": ({}, {"alpha0": 1.0}),
    "pt_well": ({"A0": "-2*sech(x)^2"}, {"alpha0": 0.5}),
    "shear": ({"A12": "c12*xi", "A0": "-2*sech(x)^2"}, {"c12": 1.0, "alpha0": 0.5}),
    "fullmix": (
        {"A12": "c12*xi", "A22": "1 + c22*xi^2", "A1": "i*a1*xi", "A2": "a2*xi",
         "A0": "-2*sech(x)^2 + i*a0*xi"},
        {"c12": 1.0, "c22": 0.5, "a1": 0.5, "a2": 0.5, "a0": 0.3, "alpha0": 0.5},
    ),
}
CATALOG_NAMES = tuple(_CATALOG)


def catalog(name: str, overrides: Mapping[str, float] = None) -> CoefficientSet:
    """Built-in test problem ``name`` with parameter ``overrides``."""
    if name not in _CATALOG:
        raise KeyError(f"model.catalog: unknown problem {name!r}; choose from {', '.join(CATALOG_NAMES)}")
    coeffs, defaults = _CATALOG[name]
    params = dict(defaults)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise KeyError(f"model.catalog: problem {name!r} has no parameter {k!r}; "
                           f"declared: {', '.join(sorted(params))}")
        params[k] = float(v)
    coeffs = dict(coeffs)
    coeffs["alpha"] = "alpha0"
    return from_strings(coeffs, params, name)


@dataclass
class HypothesisReport:
    symmetry_ok: Dict[str, bool] = field(default_factory=dict)
    max_violation: Dict[str, float] = field(default_factory=dict)
    c0: float = float("nan")
    c1: float = float("nan")
    c2: float = float("nan")
    c3: float = float("nan")
    sample_grid: str = ""

    @property
    def ok(self) -> bool:
        return all(self.symmetry_ok.values())

    def rows(self):
        for k in self.max_violation:
            yield k, self.max_violation[k], self.symmetry_ok[k]


def probe_grid(nx: int, nxi: int, xrange=(-10.0, 10.0)):
    if nx < 3 or nxi < 3:
        raise ValueError("model: probe grid needs nx, nxi >= 3")
    xs = np.linspace(xrange[0], xrange[1], nx)
    xis = np.linspace(-0.5, 0.5, nxi)
    return xs, xis


def validate_symmetry(cs: CoefficientSet, nx: int = 41, nxi: int = 21, tol: float = 1e-12,
                      xrange=(-10.0, 10.0)) -> HypothesisReport:
    """Sample the parity identities on a probe grid and report the worst violation."""
    xs, xis = probe_grid(nx, nxi, xrange)
    t = {k: cs.grid(k, xs, xis) for k in COEFF_NAMES if k != "alpha"}
    r = {k: v[:, ::-1] for k, v in t.items()}  # values at -xi
    checks = {
        "A11 even": r["A11"] - t["A11"],
        "A12 odd": r["A12"] + t["A12"],
        "A22 even": r["A22"] - t["A22"],
        "conj A1(-xi) = A1": np.conj(r["A1"]) - t["A1"],
        "A2(-xi) = -conj A2": r["A2"] + np.conj(t["A2"]),
        "A0(-xi) = conj A0": r["A0"] - np.conj(t["A0"]),
        "A21 = A12": t["A21"] - t["A12"],
        "Im Aij = 0": np.maximum.reduce([np.abs(t[k].imag) for k in ("A11", "A12", "A21", "A22")]),
        "Im alpha = 0": np.abs(cs.points("alpha", xs).imag)[:, None],
    }
    rep = HypothesisReport(sample_grid=f"x in [{xrange[0]}, {xrange[1]}] ({nx} pts), xi in [-1/2, 1/2] ({nxi} pts)")
    for k, v in checks.items():
        m = float(np.max(np.abs(v)))
        rep.max_violation[k] = m
        rep.symmetry_ok[k] = m <= tol
    return rep


def estimate_constants(cs: CoefficientSet, nx: int = 41, nxi: int = 21,
                       xrange=(-10.0, 10.0)) -> HypothesisReport:
    """Probe-grid estimates of the ellipticity and enclosure constants.

    Suprema are taken over the probe points only, so they bound the true
    suprema from below.
    """
    rep = validate_symmetry(cs, nx, nxi, tol=np.inf, xrange=xrange)
    xs, xis = probe_grid(nx, nxi, xrange)
    a = cs.grid("A11", xs, xis).real
    b = 0.5 * (cs.grid("A12", xs, xis).real + cs.grid("A21", xs, xis).real)
    d = cs.grid("A22", xs, xis).real
    lam_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b ** 2)
    idx = np.unravel_index(np.argmin(lam_min), lam_min.shape)
    c0 = float(lam_min[idx])
    if c0 <= 0:
        raise HypothesisError(f"model.estimate_constants: ellipticity fails (smallest eigenvalue {c0:.3g}) "
                              f"at x={xs[idx[0]]:.6g}, xi={xis[idx[1]]:.6g}")
    sup1 = np.max(np.abs(cs.grid("A1", xs, xis)))
    sup2 = np.max(np.abs(cs.grid("A2", xs, xis)))
    rep.c0 = c0
    rep.c1 = float(np.sqrt(sup1 ** 2 + sup2 ** 2))
    rep.c2 = float(np.max(np.abs(cs.grid("A0", xs, xis))))
    rep.c3 = float(2 * np.max(np.abs(cs.points("alpha", xs))))
    return rep


def check_ellipticity(cs: CoefficientSet, xs, xis) -> None:
    """Raise if A22 is not positive at the given points."""
    d = cs.grid("A22", xs, xis).real
    if np.any(d <= 0):
        a, b = np.argwhere(d <= 0)[0]
        raise HypothesisError(f"model: A22 <= 0 at x={np.ravel(xs)[a]:.6g}, xi={np.ravel(xis)[b]:.6g}")
