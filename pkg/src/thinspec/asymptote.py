"""Two-scale asymptotics of the perturbed eigenvalues.

The eigenfunction is sought as phi + eps*phi1 + eps^2*phi2 + ... with
phi_p = phi_p(x, xi).  Rescaling x_n = eps*xi splits the strip operator as

    eps^-2 K0 + eps^-1 K1 + T5,
    K0 u = -d_xi (C d_xi u),      K1 u = Nstar(d_xi u) - d_xi (Nnu u),
    Nnu u  = B d_x u + (conj(a2) + i alpha) u,
    Nstar v = -d_x (B v) + (a2 + i alpha) v,
    T5 u  = -d_x (A11 d_x u) + a1 d_x u - d_x (conj(a1) u) + a0 u,

with B = A21, C = A22, a_j = A_j, and the boundary condition becomes
C d_xi phi_p + Nnu phi_{p-1} = 0 at both faces.  Each order is a transverse
cell problem; it is solved through its flux

    C d_xi phi_p = cumint(F_p) - Nnu phi_{p-1},
    F_p = Nstar(d_xi phi_{p-1}) + (T5 - lambda0) phi_{p-2} - sum Lambda_q phi_{p-2-q},

which never differentiates a profile in xi.  Solvability (integral of F_p over
the cell vanishes) yields the limiting equation, the matrix L and the
eigenvalue corrections.

Fields have shape (Nx, Nq): tangential grid times transverse quadrature
nodes.  Tangential derivatives come either from the strip assembly's own
stencils (the default, so the expansion matches the strip matrix term by term
in x) or from 4th-order central differences.  Both are padded with zeros
beyond the Dirichlet ends and keep discrete integration by parts exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import DEFAULT_QUAD, QuadRule, SolvabilityError
from .disc import DiscreteOperator, Grid, assemble_perturbed, limiting_operator
from .model import CoefficientSet
from .spectral import DegeneracyError, NumericalError, eigs_near


def dx4(u, hx: float) -> np.ndarray:
    """4th-order central difference along axis 0, zero beyond the ends."""
    u = np.asarray(u)
    pad = np.zeros((2,) + u.shape[1:], dtype=u.dtype)
    up = np.concatenate([pad, u, pad], axis=0)
    return (-up[4:] + 8 * up[3:-1] - 8 * up[1:-3] + up[:-4]) / (12 * hx)


@dataclass
class Coefficients:
    """Coefficient fields tabulated on the tangential grid and quadrature nodes."""
    xs: np.ndarray
    quad: QuadRule
    A11: np.ndarray
    B: np.ndarray
    C: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a0: np.ndarray
    alpha: np.ndarray   # shape (Nx, 1)
    A11m: Optional[np.ndarray] = None   # x-midpoint values, shape (Nx-1, Nq)
    Bm: Optional[np.ndarray] = None
    a1m: Optional[np.ndarray] = None

    @property
    def hx(self) -> float:
        return self.xs[1] - self.xs[0]

    @classmethod
    def tabulate(cls, cs: CoefficientSet, xs, quad: QuadRule = DEFAULT_QUAD) -> "Coefficients":
        xs = np.asarray(xs, dtype=float)
        t = lambda k: cs.grid(k, xs, quad.nodes)
        xm = 0.5 * (xs[:-1] + xs[1:])
        tm = lambda k: cs.grid(k, xm, quad.nodes)
        return cls(xs, quad, t("A11").real, t("A21").real, t("A22").real, t("A1"), t("A2"), t("A0"),
                   cs.points("alpha", xs).real[:, None], tm("A11").real, tm("A21").real, tm("A1"))


def _delta(u, hx):
    """Forward differences onto the x-midpoints."""
    return (u[1:] - u[:-1]) / hx


def _div(w, hx):
    """Nodal divergence of a midpoint flux, zero flux beyond the ends."""
    pad = np.zeros((1,) + w.shape[1:], dtype=w.dtype)
    wp = np.concatenate([pad, w, pad], axis=0)
    return (wp[1:] - wp[:-1]) / hx


def _avg_to_nodes(w):
    """Average of the two adjacent midpoint values at every node."""
    pad = np.zeros((1,) + w.shape[1:], dtype=w.dtype)
    wp = np.concatenate([pad, w, pad], axis=0)
    return 0.5 * (wp[1:] + wp[:-1])


SCHEMES = ("fd4", "strip")


class FieldOps:
    """The operators of the recurrence acting on tabulated fields.

    ``scheme="fd4"`` differentiates in x with 4th-order central differences.
    ``scheme="strip"`` uses the tangential stencils of the strip assembly
    (midpoint fluxes and x-averaged mixed terms), so the expansion is
    consistent with the assembled strip matrix term by term in x.
    """

    def __init__(self, co: Coefficients, lambda0: float, scheme: str = "strip"):
        if scheme not in SCHEMES:
            raise ValueError(f"asymptote: unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
        self.co = co
        self.q = co.quad
        self.lambda0 = lambda0
        self.scheme = scheme

    def _f(self, u):
        u = np.asarray(u)
        return u[:, None] if u.ndim == 1 else u

    def D(self, u):
        return dx4(self._f(u), self.co.hx)

    def Nnu(self, u):
        u = self._f(u)
        co = self.co
        if self.scheme == "strip":
            bd = _avg_to_nodes(co.Bm * _delta(u, co.hx))
        else:
            bd = co.B * self.D(u)
        return bd + (np.conj(co.a2) + 1j * co.alpha) * u

    def Nstar(self, v):
        co = self.co
        if self.scheme == "strip":
            v = self._f(v)
            bd = -_div(co.Bm * 0.5 * (v[1:] + v[:-1]), co.hx)
        else:
            bd = -self.D(co.B * v)
        return bd + (co.a2 + 1j * co.alpha) * v

    def T5(self, u):
        u = self._f(u)
        co = self.co
        if self.scheme == "strip":
            du = _delta(u, co.hx)
            um = 0.5 * (u[1:] + u[:-1])
            return (-_div(co.A11m * du, co.hx) + _avg_to_nodes(co.a1m * du)
                    - _div(np.conj(co.a1m) * um, co.hx) + co.a0 * u)
        return -self.D(co.A11 * self.D(u)) + co.a1 * self.D(u) - self.D(np.conj(co.a1) * u) + co.a0 * u

    def integrate(self, u):
        return self.q.integrate(u)

    def from_flux(self, flux):
        """Mean-zero profile whose co-normal flux C d_xi phi equals ``flux``."""
        g = flux / self.co.C
        return self.q.cumulative(g) + self.q.integrate((self.q.nodes - 0.5) * g)[:, None]

    # first order
    def t6_flux(self, u):
        return -self.Nnu(u)

    def T6(self, u):
        return self.from_flux(self.t6_flux(u))

    # second order: the cell solve driven by phi_{p-1} = T6 u, phi_{p-2} = u
    def t7_flux(self, u, t6u=None, lam=None):
        t6u = self.T6(u) if t6u is None else t6u
        lam = self.lambda0 if lam is None else lam
        F = self.Nstar(self.t6_flux(u) / self.co.C) + self.T5(u) - lam * self._f(u)
        return self.q.cumulative(F) - self.Nnu(t6u)

    def T7(self, u):
        return self.from_flux(self.t7_flux(u))

    def H0(self, u):
        """Averaged operator obtained from the second-order solvability condition."""
        return self.integrate(self.Nstar(self.t6_flux(u) / self.co.C) + self.T5(u))

    def hop(self, u, lam=None):
        """h(u) = - integral (Nstar d_xi T7 + T5 T6) u."""
        t6u = self.T6(u)
        return -self.integrate(self.Nstar(self.t7_flux(u, t6u, lam) / self.co.C) + self.T5(t6u))


def field_limiting_operator(ops: FieldOps, herm_tol: float = 1e-10) -> DiscreteOperator:
    """Matrix of ``ops.H0`` on the interior x-nodes, built by banded probing.

    Using this matrix (rather than the 2nd-order line stencil) for the limiting
    eigenpairs keeps them exact eigenvectors of the same discrete operators
    that enter h(u), which the Hermitian structure of L relies on.
    """
    xs = ops.co.xs
    n = xs.size - 2
    width = 9  # D(B D u) couples nodes up to 4 apart
    rows, cols, vals = [], [], []
    for c in range(width):
        u = np.zeros(xs.size)
        cols_c = np.arange(c, n, width)
        u[cols_c + 1] = 1.0
        y = ops.H0(u)[1:-1]
        for j in cols_c:
            lo, hi = max(0, j - 4), min(n, j + 5)
            rows.extend(range(lo, hi))
            cols.extend([j] * (hi - lo))
            vals.extend(y[lo:hi])
    A = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    A.eliminate_zeros()
    defect = spla.norm(A - A.conj().T) / spla.norm(A)
    if defect > herm_tol:
        raise NumericalError(f"asymptote: averaged field operator not Hermitian (defect {defect:.2e})")
    A = (0.5 * (A + A.conj().T)).tocsr()
    hx = ops.co.hx
    return DiscreteOperator(A, "limiting", xs, np.arange(n), np.full(n, np.sqrt(hx)))


def t6_apply(phi, dphi, Gj, G0) -> np.ndarray:
    """phi1 = G_1 dphi/dx + G_0 phi from tabulated profiles (shape (Nx, Nq))."""
    return Gj[0] * np.asarray(dphi)[:, None] + G0 * np.asarray(phi)[:, None]


def inner(f, g, hx: float) -> complex:
    """Discrete L2 inner product on the line (trapezoid, Dirichlet ends)."""
    return complex(hx * np.sum(np.asarray(f) * np.conj(g)))


@dataclass
class AsymptoticExpansion:
    lambda0: float
    m: int
    xs: np.ndarray
    phik: np.ndarray                 # (m, Nx) rotated limiting eigenvectors
    L: np.ndarray
    Lambda1: np.ndarray
    Psi1: Optional[np.ndarray] = None
    Lambda2: Optional[np.ndarray] = None
    Lambda2_direct: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    degenerate: bool = False
    lambda0_all: Optional[np.ndarray] = None
    residuals: dict = field(default_factory=dict)
    face_defects: dict = field(default_factory=dict)

    @property
    def rounding_scale(self) -> float:
        """Absolute rounding level of the entries of L (set by the 1/hx^2 stencil)."""
        ops = getattr(self, "_ops", None)
        if ops is None:
            return 0.0
        co = ops.co
        return 64 * np.finfo(float).eps * (4 * np.max(np.abs(co.A11m)) / co.hx ** 2 + abs(self.lambda0) + 1)

    @property
    def hermiticity(self) -> float:
        """||L - L^H|| / ||L||; a defect at the rounding level of the entries counts as zero."""
        d = np.linalg.norm(self.L - self.L.conj().T)
        tol = self.rounding_scale
        if d <= tol:
            return 0.0
        return float(d / max(np.linalg.norm(self.L), tol))

    def rows(self):
        for k in range(self.m):
            l2 = self.Lambda2[k].real if self.Lambda2 is not None else float("nan")
            yield (k, self.lambda0, self.Lambda1[k].real, l2, self.hermiticity, int(self.degenerate))


def limiting_eigenpairs(M0: DiscreteOperator, sigma: float, m: Optional[int] = None,
                        mult_tol: float = 1e-6, kmax: int = 6):
    """Limiting eigenvalue cluster nearest ``sigma`` with nodal eigenvectors.

    Returns (eigenvalues, vectors) with vectors on the full x-grid, normalised
    in the discrete L2 inner product.  Without ``m`` the multiplicity is the
    count of eigenvalues within ``mult_tol`` of the nearest one.
    """
    rep = eigs_near(M0, sigma, k=kmax if m is None else max(m, 1))
    lams = rep.eigenvalues.real
    if m is None:
        m = int(np.sum(np.abs(lams - lams[0]) <= mult_tol))
    lams = lams[:m]
    hx = M0.hx
    vecs = []
    for p in rep.pairs[:m]:
        u = M0.nodal(p.vector)
        k = np.argmax(np.abs(u))
        u = u * (abs(u[k]) / u[k])  # real when the operator is real
        if np.max(np.abs(u.imag)) < 1e-10 * np.max(np.abs(u)):
            u = u.real
        vecs.append(u / np.sqrt(hx * np.sum(np.abs(u) ** 2)))
    V = np.array(vecs)
    # orthonormalise within the cluster
    G = hx * V.conj() @ V.T
    w, U = np.linalg.eigh(G)
    V = (U @ np.diag(w ** -0.5) @ U.conj().T).T @ V if m > 1 else V
    return lams, V


def assemble_L(phik, ops: FieldOps, degeneracy_tol: float = 1e-8, lams=None):
    """Matrix L_ks = -(h(phi_k), phi_s); returns (L, Lambda1, rotated phik, flag).

    ``lams`` gives each phi_k its own limiting eigenvalue inside T7; for an
    exactly multiple eigenvalue this is the common lambda0, for a split
    cluster it keeps the diagonal of L real.
    """
    phik = np.atleast_2d(phik)
    m = phik.shape[0]
    hx = ops.co.hx
    lams = [None] * m if lams is None else lams
    h = np.array([ops.hop(p, lam) for p, lam in zip(phik, lams)])
    L = np.array([[-inner(h[k], phik[s], hx) for s in range(m)] for k in range(m)])
    Lh = 0.5 * (L + L.conj().T)
    lam1, U = np.linalg.eigh(Lh)
    rotated = U.T @ phik  # columns of U give the new basis: phi'_k = sum_s U[s, k] phi_s
    if np.iscomplexobj(rotated) and np.max(np.abs(rotated.imag)) < 1e-13 * np.max(np.abs(rotated)):
        rotated = rotated.real
    degenerate = bool(m > 1 and np.min(np.diff(lam1)) < degeneracy_tol)
    return L, lam1, rotated, degenerate, U.T @ h


def solve_reduced(M0: DiscreteOperator, lambda0: float, phik, rhs, tol: float = 1e-8) -> np.ndarray:
    """Solve (H0 - lambda0) Psi = rhs with Psi orthogonal to every phi_k.

    Vectors are nodal on the full x-grid.  A bordered system imposes the
    orthogonality constraints; the rhs must already be orthogonal to the
    phi_k (to ``tol`` relative), otherwise a SolvabilityError is raised.
    """
    phik = np.atleast_2d(phik)
    hx = M0.hx
    rhs = np.asarray(rhs, dtype=complex)
    proj = np.array([inner(rhs, p, hx) for p in phik])
    scale = max(np.sqrt(hx * np.sum(np.abs(rhs) ** 2)), 1e-300)
    if np.any(np.abs(proj) > tol * scale) and np.sqrt(hx * np.sum(np.abs(rhs) ** 2)) > 0:
        raise SolvabilityError(f"asymptote.solve_reduced: right-hand side not orthogonal to the "
                               f"eigenspace (projection {np.max(np.abs(proj)):.2e})")
    n = M0.dim
    m = phik.shape[0]
    A = (M0.matrix - lambda0 * sp.identity(n)).tocsc()
    Pk = np.array([M0.scaled(p) for p in phik]).T  # scaled coordinates, orthonormal
    K = sp.bmat([[A, sp.csc_matrix(Pk)], [sp.csc_matrix(Pk.conj().T), None]]).tocsc()
    b = np.concatenate([M0.scaled(rhs), np.zeros(m)])
    sol = spla.spsolve(K, b)
    return M0.nodal(sol[:n])


@dataclass
class ExpansionInputs:
    cs: CoefficientSet
    X: float
    Nx: int
    quad: QuadRule = DEFAULT_QUAD


def expand(cs: CoefficientSet, X: float, Nx: int, sigma: float, quad: QuadRule = DEFAULT_QUAD,
           m: Optional[int] = None, mult_tol: float = 1e-6, order: int = 2,
           scheme: str = "strip") -> AsymptoticExpansion:
    """Limiting eigenpairs near ``sigma`` and the corrections through ``order``."""
    xs = np.linspace(-X, X, Nx)
    co = Coefficients.tabulate(cs, xs, quad)
    ops = FieldOps(co, 0.0, scheme)
    M0 = field_limiting_operator(ops)
    lams, V = limiting_eigenpairs(M0, sigma, m, mult_tol)
    lambda0 = float(np.mean(lams))
    ops.lambda0 = lambda0
    L, lam1, phik, degenerate, h = assemble_L(V, ops, lams=lams)
    ex = AsymptoticExpansion(lambda0, len(lams), M0.xs, phik, L, lam1, degenerate=degenerate,
                             lambda0_all=lams)
    ex._M0 = M0
    ex._ops = ops
    ex._h = h
    # a split cluster (m > 1 without exact multiplicity) leaves L only
    # approximately Hermitian; the second order is then not defined
    if order >= 2 and not degenerate and (ex.m == 1 or ex.hermiticity <= 1e-8):
        second_order(ex)
    return ex


def second_order(ex: AsymptoticExpansion) -> AsymptoticExpansion:
    """Psi1, Lambda2 and b1 for a non-degenerate L."""
    if ex.degenerate:
        raise DegeneracyError("asymptote.lambda2: eigenvalues of L coincide; higher orders not defined")
    ops, M0 = ex._ops, ex._M0
    hx = M0.hx
    m = ex.m
    phik = ex.phik
    Psi, hchk = [], []
    for k in range(m):
        h = ex._h[k]
        Psi.append(solve_reduced(M0, ex.lambda0, phik, h + ex.Lambda1[k] * phik[k]))
    Psi = np.array(Psi)
    for k in range(m):
        t6 = ops.T6(phik[k])
        t7_flux = ops.t7_flux(phik[k], t6)
        t7 = ops.from_flux(t7_flux)
        F3 = ops.Nstar(t7_flux / ops.co.C) + ops.T5(t6) - ops.lambda0 * t6 - ex.Lambda1[k] * phik[k][:, None]
        flux3 = ops.q.cumulative(F3) - ops.Nnu(t7)
        hc = -ops.integrate(ops.Nstar(flux3 / ops.co.C)) - ops.integrate(ops.T5(t7)) + ops.hop(Psi[k])
        hchk.append(hc)
    lam2 = np.array([-inner(hchk[k], phik[k], hx) for k in range(m)])
    b = np.zeros((m, m), dtype=complex)
    for k in range(m):
        for s in range(m):
            if s != k:
                gap = ex.Lambda1[s] - ex.Lambda1[k]
                if abs(gap) < 1e-8:
                    raise DegeneracyError("asymptote.lambda2: coinciding first corrections in b-coefficient")
                b[k, s] = inner(hchk[k], phik[s], hx) / gap
    ex.Psi1 = Psi
    ex.Lambda2 = lam2
    ex.b1 = b
    ex.Lambda2_direct = np.array([_lambda2_direct(ex, k) for k in range(m)])
    return ex


def profiles(ex: AsymptoticExpansion, k: int = 0):
    """phi1, phi2, phi3 fields (Nx, Nq) for eigenfunction k with Phi2 = Phi3 = 0."""
    ops = ex._ops
    phi = ex.phik[k]
    Phi1 = ex.Psi1[k] + ex.b1[k] @ ex.phik if ex.Psi1 is not None else np.zeros_like(phi)
    t6 = ops.T6(phi)
    t7_flux = ops.t7_flux(phi, t6)
    t7 = ops.from_flux(t7_flux)
    phi1 = t6 + Phi1[:, None]
    phi2 = t7 + ops.T6(Phi1)
    lam1 = ex.Lambda1[k]
    F3 = ops.Nstar(t7_flux / ops.co.C) + ops.T5(t6) - ops.lambda0 * t6 - lam1 * phi[:, None]
    flux3 = ops.q.cumulative(F3) - ops.Nnu(t7) + ops.t7_flux(Phi1)
    phi3 = ops.from_flux(flux3)
    return phi1, phi2, phi3, flux3


def _lambda2_direct(ex: AsymptoticExpansion, k: int) -> complex:
    ops = ex._ops
    phi1, phi2, phi3, flux3 = profiles(ex, k)
    val = ops.integrate(ops.Nstar(flux3 / ops.co.C) + ops.T5(phi2) - ops.lambda0 * phi2)
    return inner(val, ex.phik[k], ops.co.hx)


def lambda2(ex: AsymptoticExpansion) -> np.ndarray:
    if ex.Lambda2 is None:
        second_order(ex)
    return ex.Lambda2


def strip_field(ex: AsymptoticExpansion, g: Grid, eps: float, N: int, k: int = 0) -> np.ndarray:
    """phi + sum_{p<=N} eps^p phi_p at the strip nodes (flat index a*Nt + m)."""
    if not np.allclose(g.xs, ex.xs):
        raise ValueError("asymptote.residual_check: strip and expansion x-grids differ")
    phi = ex.phik[k]
    u = np.repeat(phi[:, None], g.Nt, axis=1).astype(complex)
    if N >= 1:
        parts = profiles(ex, k)[:3]
        I = ex._ops.q.interp_matrix(g.xis)
        for p in range(1, N + 1):
            u = u + eps ** p * (parts[p - 1] @ I.T)
    return u.ravel()


def residual_check(ex: AsymptoticExpansion, cs: CoefficientSet, g: Grid, N: int, k: int = 0,
                   M: Optional[DiscreteOperator] = None) -> float:
    """Relative L2 residual of the truncated expansion under the strip matrix.

    The truncation misses the Robin condition at order eps^N, and in the
    strong form the face rows turn that defect into a spike of height
    ~eps^(N-1)/sqrt(h_xi).  The residual is therefore measured on the rows
    of the transverse-interior nodes; the face defect is recorded separately
    in ``ex.face_defects`` as a co-normal flux on the line, relative to the
    line norm of the field.
    """
    if N not in (1, 2, 3):
        raise ValueError("asymptote.residual_check: N must be 1, 2 or 3")
    if N >= 2 and ex.Psi1 is None:
        raise ValueError("asymptote.residual_check: expansion lacks the second-order terms")
    M = assemble_perturbed(cs, g) if M is None else M
    if M.grid is None or M.grid != g:
        raise ValueError("asymptote.residual_check: matrix assembled on a different grid")
    corr = [ex.Lambda1[k], ex.Lambda2[k] if ex.Lambda2 is not None else 0.0]
    lam = ex.lambda0 + sum(g.eps ** p * corr[p - 1] for p in range(1, N - 1))
    v = M.scaled(strip_field(ex, g, g.eps, N, k))
    nv = np.linalg.norm(v)
    res = (M.matrix @ v - lam * v).reshape(g.Nx - 2, g.Nt)
    r = float(np.linalg.norm(res[:, 1:-1]) / nv)
    sw = M.sqrt_w.reshape(g.Nx - 2, g.Nt)[:, [0, -1]]
    flux = res[:, [0, -1]] / sw * (g.eps * g.omega[0])
    ex.residuals[(k, N, g.eps)] = r
    ex.face_defects[(k, N, g.eps)] = float(np.sqrt(g.hx * np.sum(np.abs(flux) ** 2)) / (nv / np.sqrt(g.eps)))
    return r
