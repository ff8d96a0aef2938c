"""Transverse (xi-direction) machinery on the unit cell [-1/2, 1/2].

Composite Gauss-Legendre quadrature with cumulative integrals, the averaged
coefficients of the limiting operator, the transverse cell solver and the
first-order profiles.  Profile arrays carry the xi-nodes in the last axis;
leading axes (typically the x-grid) are broadcast through.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre as npleg

from .model import CoefficientSet, HypothesisError


class SolvabilityError(ValueError):
    """The cell problem data violate the compatibility condition."""


def _lagrange_matrix(nodes, targets):
    """Matrix interpolating values at ``nodes`` to ``targets`` (reference interval)."""
    nodes = np.asarray(nodes)
    targets = np.asarray(targets)
    L = np.ones((targets.size, nodes.size))
    for j, sj in enumerate(nodes):
        for k, sk in enumerate(nodes):
            if k != j:
                L[:, j] *= (targets - sk) / (sj - sk)
    return L


@dataclass(frozen=True)
class QuadRule:
    """Composite Gauss-Legendre rule on [-1/2, 1/2]."""

    panels: int = 8
    order: int = 8

    def __post_init__(self):
        if self.panels < 1 or self.order < 2:
            raise ValueError("cell.QuadRule: need panels >= 1 and order >= 2")

    @cached_property
    def _ref(self):
        s, w = npleg.leggauss(self.order)
        return s, w

    @cached_property
    def edges(self) -> np.ndarray:
        return np.linspace(-0.5, 0.5, self.panels + 1)

    @property
    def h(self) -> float:
        return 1.0 / self.panels

    @cached_property
    def nodes(self) -> np.ndarray:
        s, _ = self._ref
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        return (mid[:, None] + 0.5 * self.h * s[None, :]).ravel()

    @cached_property
    def weights(self) -> np.ndarray:
        _, w = self._ref
        return np.tile(0.5 * self.h * w, self.panels)

    @property
    def size(self) -> int:
        return self.panels * self.order

    @cached_property
    def _antideriv(self) -> np.ndarray:
        # C[i, j] = integral from -1 to s_i of the j-th Lagrange basis function
        s, _ = self._ref
        V = npleg.legvander(s, self.order - 1)
        coef = np.linalg.inv(V)  # column j: Legendre coefficients of basis j
        C = np.empty((self.order, self.order))
        for j in range(self.order):
            C[:, j] = npleg.legval(s, npleg.legint(coef[:, j], lbnd=-1))
        return C

    @cached_property
    def _dmat(self) -> np.ndarray:
        s, _ = self._ref
        V = npleg.legvander(s, self.order - 1)
        coef = np.linalg.inv(V)
        D = np.empty((self.order, self.order))
        for j in range(self.order):
            D[:, j] = npleg.legval(s, npleg.legder(coef[:, j]))
        return D

    def _split(self, f):
        f = np.asarray(f)
        if f.shape[-1] != self.size:
            raise ValueError(f"cell.QuadRule: expected {self.size} xi-values, got {f.shape[-1]}")
        return f.reshape(f.shape[:-1] + (self.panels, self.order))

    def integrate(self, f) -> np.ndarray:
        return np.asarray(f) @ self.weights

    def cumulative(self, f) -> np.ndarray:
        """Values of the integral from -1/2 to each node."""
        fp = self._split(f)
        local = 0.5 * self.h * np.einsum("ij,...pj->...pi", self._antideriv, fp)
        totals = 0.5 * self.h * fp @ self._ref[1]
        offset = np.cumsum(totals, axis=-1) - totals
        return (local + offset[..., None]).reshape(np.shape(f))

    def _locate(self, targets):
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        if np.any(targets < -0.5 - 1e-14) or np.any(targets > 0.5 + 1e-14):
            raise ValueError("cell.QuadRule: targets must lie in [-1/2, 1/2]")
        p = np.clip(((targets + 0.5) / self.h).astype(int), 0, self.panels - 1)
        mid = self.edges[p] + 0.5 * self.h
        return targets, p, (targets - mid) / (0.5 * self.h)

    def interp_matrix(self, targets) -> np.ndarray:
        """Dense matrix mapping node values to values at ``targets``."""
        targets, p, s = self._locate(targets)
        M = np.zeros((targets.size, self.size))
        sref = self._ref[0]
        for q in np.unique(p):
            sel = p == q
            M[np.ix_(sel, np.arange(q * self.order, (q + 1) * self.order))] = _lagrange_matrix(sref, s[sel])
        return M

    def interp(self, f, targets) -> np.ndarray:
        return np.asarray(f) @ self.interp_matrix(targets).T

    def cumulative_matrix_at(self, targets) -> np.ndarray:
        """Matrix giving the integral from -1/2 to each target."""
        targets, p, s = self._locate(targets)
        sref, wref = self._ref
        M = np.zeros((targets.size, self.size))
        Vinv = np.linalg.inv(npleg.legvander(sref, self.order - 1))
        for q in np.unique(p):
            sel = p == q
            cols = np.arange(q * self.order, (q + 1) * self.order)
            block = np.empty((sel.sum(), self.order))
            for j in range(self.order):
                block[:, j] = npleg.legval(s[sel], npleg.legint(Vinv[:, j], lbnd=-1))
            M[np.ix_(sel, cols)] = 0.5 * self.h * block
            if q > 0:
                M[np.ix_(sel, np.arange(q * self.order))] = self.weights[: q * self.order]
        return M

    def cumulative_at(self, f, targets) -> np.ndarray:
        return np.asarray(f) @ self.cumulative_matrix_at(targets).T

    def differentiate(self, f) -> np.ndarray:
        """Panelwise spectral derivative at the nodes."""
        fp = self._split(f)
        return (np.einsum("ij,...pj->...pi", self._dmat, fp) / (0.5 * self.h)).reshape(np.shape(f))

    @cached_property
    def ends(self) -> np.ndarray:
        """2 x size matrix giving values at xi = -1/2 and xi = +1/2."""
        return self.interp_matrix([-0.5, 0.5])


DEFAULT_QUAD = QuadRule()


@dataclass
class LimitingCoefficients:
    xs: np.ndarray
    A11: np.ndarray   # real
    A1: np.ndarray    # complex
    A00: np.ndarray   # complex

    def rows(self):
        for a, x in enumerate(self.xs):
            yield (x, self.A11[a], self.A1[a].real, self.A1[a].imag, self.A00[a].real, self.A00[a].imag)


def _tab(cs: CoefficientSet, xs, quad: QuadRule):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    t = {k: cs.grid(k, xs, quad.nodes) for k in ("A11", "A12", "A21", "A22", "A1", "A2", "A0")}
    t["alpha"] = cs.points("alpha", xs)[:, None]
    if np.any(t["A22"].real <= 0):
        a, b = np.argwhere(t["A22"].real <= 0)[0]
        raise HypothesisError(f"cell: A22 <= 0 at x={xs[a]:.6g}, xi={quad.nodes[b]:.6g}")
    return xs, t


def b_integrands(cs: CoefficientSet, xs, xis):
    """Pointwise B-coefficients (B11, B1, B0) on the grid xs x xis."""
    g = {k: cs.grid(k, xs, xis) for k in ("A11", "A12", "A21", "A22", "A1", "A2", "A0")}
    al = cs.points("alpha", np.atleast_1d(xs))[:, None]
    C = g["A22"].real
    if np.any(C <= 0):
        raise HypothesisError("cell.b_coefficients: A22 <= 0")
    An = g["A2"]
    B11 = (g["A11"] - g["A12"] * g["A21"] / C).real
    B1 = g["A1"] - An * g["A21"] / C
    B0 = g["A0"] + al ** 2 / C - 1j * al * (An + np.conj(An)) / C - np.abs(An) ** 2 / C
    return B11, B1, B0


def b_coefficients(cs: CoefficientSet, x: float, xi: float):
    B11, B1, B0 = b_integrands(cs, [x], [xi])
    return float(B11[0, 0]), complex(B1[0, 0]), complex(B0[0, 0])


def limiting_coefficients(cs: CoefficientSet, xs, quad: QuadRule = DEFAULT_QUAD) -> LimitingCoefficients:
    """Transverse averages defining the limiting operator, tabulated on ``xs``."""
    xs, t = _tab(cs, xs, quad)
    C = t["A22"].real
    al = t["alpha"]
    An = t["A2"]
    A11 = quad.integrate((t["A11"] - t["A12"] * t["A21"] / C).real)
    A1 = quad.integrate(t["A1"] - An * t["A21"] / C)
    A00 = quad.integrate(t["A0"] + al ** 2 / C - 2j * al * An.real / C - np.abs(An) ** 2 / C)
    if np.any(A11 <= 0):
        raise HypothesisError("cell.limiting_coefficients: averaged diffusion is not positive")
    return LimitingCoefficients(xs, A11, A1, A00)


@dataclass
class CellSolution:
    phi: np.ndarray
    flux: np.ndarray      # Ann * dphi/dxi at the nodes
    solvability: np.ndarray


def cell_solve(Ann, F, gm, gp, quad: QuadRule = DEFAULT_QUAD, tol: float = 1e-10,
               check: bool = True) -> CellSolution:
    """Mean-zero solution of -(Ann phi')' + F = 0, Ann phi' + g = 0 at xi = -/+1/2.

    Arrays have xi in the last axis; ``gm``/``gp`` broadcast over the leading
    axes.  The problem is solvable iff integral F = gm - gp; with
    ``check=True`` a violation above ``tol`` raises, otherwise the residual is
    only reported and the formula still uses ``gm`` (the flux then fails at
    xi = +1/2 by the same amount).
    """
    Ann = np.asarray(Ann, dtype=float)
    F = np.asarray(F)
    if np.any(Ann <= 0):
        raise HypothesisError("cell.cell_solve: Ann must be positive")
    gm = np.asarray(gm)
    gp = np.asarray(gp)
    res = quad.integrate(F) - (gm - gp)
    if check and np.any(np.abs(res) > tol):
        raise SolvabilityError(f"cell.cell_solve: solvability residual {np.max(np.abs(res)):.3e} exceeds {tol:g}")
    Fc = quad.cumulative(F)
    flux = Fc - gm[..., None]
    inv = 1.0 / Ann
    weight = quad.nodes - 0.5
    I1 = quad.cumulative(inv * np.ones_like(Fc.real))
    c1 = quad.integrate(weight * inv)
    J = quad.cumulative(inv * Fc)
    c2 = quad.integrate(weight * inv * Fc)
    phi = -gm[..., None] * (I1 + c1[..., None]) + (J + c2[..., None])
    return CellSolution(phi, flux, res)


@dataclass
class CellProfiles:
    xs: np.ndarray
    xig: np.ndarray
    Gj: np.ndarray       # shape (n-1, Nx, Nq)
    G0: np.ndarray       # shape (Nx, Nq)


def cell_profiles(cs: CoefficientSet, xs, quad: QuadRule = DEFAULT_QUAD) -> CellProfiles:
    """Mean-zero first-order profiles G_1 and G_0 on ``xs`` x quad.nodes."""
    xs, t = _tab(cs, xs, quad)
    C = t["A22"].real
    weight = quad.nodes - 0.5
    f1 = t["A21"].real / C
    f0 = (np.conj(t["A2"]) + 1j * t["alpha"]) / C
    G1 = -quad.cumulative(f1) - quad.integrate(weight * f1)[:, None]
    G0 = -quad.cumulative(f0) - quad.integrate(weight * f0)[:, None]
    return CellProfiles(xs, quad.nodes.copy(), G1[None].astype(complex), G0)


def w_profile(cs: CoefficientSet, u0, grad_u0, x, quad: QuadRule = DEFAULT_QUAD, xi=None) -> np.ndarray:
    """Corrector profile w(x, xi) for given limiting values u0 and du0/dx.

    ``x``, ``u0`` and ``grad_u0`` are arrays over the x-grid (or scalars).
    The xi-integrals run from 0 to xi.  The result is tabulated at ``xi``
    (default: the quadrature nodes) with xi in the last axis.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    u0 = np.broadcast_to(np.asarray(u0, dtype=complex), xs.shape)
    du = np.broadcast_to(np.asarray(grad_u0, dtype=complex).reshape(-1) if np.ndim(grad_u0) else grad_u0, xs.shape)
    xs, t = _tab(cs, xs, quad)
    C = t["A22"].real
    integrand = -(t["A21"].real * du[:, None] + (np.conj(t["A2"]) + 1j * t["alpha"]) * u0[:, None]) / C
    targets = quad.nodes if xi is None else np.atleast_1d(np.asarray(xi, dtype=float))
    K = quad.cumulative_matrix_at(targets) - quad.cumulative_matrix_at([0.0])
    return integrand @ K.T
