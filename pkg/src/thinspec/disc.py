"""Finite-difference assembly on the truncated strip and on the line.

The perturbed operator is discretised through its sesquilinear form: every
term of the form is approximated with midpoint/trapezoid sums on the node
grid, which builds the natural (co-normal) boundary condition in without
ghost points and keeps the adjoint structure exact at the discrete level.
Writing S for the form matrix and W for the diagonal trapezoid mass, the
discrete operator is W^{-1} S.  We store the similar matrix

    M = W^{-1/2} S W^{-1/2},

so that M^H is the discrete adjoint in the plain Euclidean inner product and
Euclidean norms of scaled vectors equal discrete L2 norms.

Unknowns are the interior x-nodes (Dirichlet truncation at x = -X, X) times
all transverse nodes.  Nodal fields on the full grid use the flat index
a*Nt + m.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .cell import DEFAULT_QUAD, LimitingCoefficients, QuadRule, limiting_coefficients
from .model import CoefficientSet, HypothesisError


@dataclass(frozen=True)
class Grid:
    X: float
    Nx: int
    eps: float
    Nt: int

    @property
    def hx(self) -> float:
        return 2 * self.X / (self.Nx - 1)

    @property
    def ht(self) -> float:
        return self.eps / (self.Nt - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(-self.X, self.X, self.Nx)

    @property
    def xis(self) -> np.ndarray:
        # exactly antisymmetric under m -> Nt-1-m
        return (np.arange(self.Nt) - 0.5 * (self.Nt - 1)) / (self.Nt - 1)

    @property
    def omega(self) -> np.ndarray:
        """Trapezoid weights of the unit xi-grid (sum to 1)."""
        w = np.full(self.Nt, 1.0 / (self.Nt - 1))
        w[[0, -1]] *= 0.5
        return w

    def node(self, a: int, m: int):
        return (self.xs[a], self.eps * self.xis[m])

    def index(self, a, m):
        return np.asarray(a) * self.Nt + np.asarray(m)


def build_grid(X: float, Nx: int, eps: float, Nt: int) -> Grid:
    if not X > 0:
        raise ValueError(f"disc.build_grid: X must be positive, got {X}")
    if Nx < 5:
        raise ValueError(f"disc.build_grid: Nx must be >= 5, got {Nx}")
    if not eps > 0:
        raise ValueError(f"disc.build_grid: eps must be positive, got {eps}")
    if Nt < 3:
        raise ValueError(f"disc.build_grid: Nt must be >= 3, got {Nt}")
    return Grid(float(X), int(Nx), float(eps), int(Nt))


@dataclass
class DiscreteOperator:
    matrix: sp.csr_matrix
    kind: str                   # "perturbed" or "limiting"
    xs: np.ndarray              # full x-grid including the Dirichlet ends
    reflection: np.ndarray      # permutation of unknowns implementing P
    sqrt_w: np.ndarray          # square roots of the quadrature weights per unknown
    grid: Optional[Grid] = None
    alpha_sign: float = 1.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def hx(self) -> float:
        return self.xs[1] - self.xs[0]

    @property
    def nodes_per_x(self) -> int:
        return 1 if self.grid is None else self.grid.Nt

    def scaled(self, u_full) -> np.ndarray:
        """Nodal field on the full grid -> scaled unknown vector."""
        u = np.asarray(u_full).reshape(len(self.xs), self.nodes_per_x)[1:-1].ravel()
        return self.sqrt_w * u

    def nodal(self, v) -> np.ndarray:
        """Scaled unknown vector -> nodal field on the full grid (zeros at the ends)."""
        out = np.zeros((len(self.xs), self.nodes_per_x), dtype=np.result_type(v, float))
        out[1:-1] = (np.asarray(v) / self.sqrt_w).reshape(-1, self.nodes_per_x)
        return out.ravel()

    def apply_P(self, v) -> np.ndarray:
        return np.asarray(v)[..., self.reflection]


class _Form:
    """Accumulates rank-one stencil contributions c * D(u) * conj(E(v))."""

    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []

    def add(self, c, D, E):
        for di, dw in D:
            for ei, ew in E:
                self.rows.append(np.ravel(ei))
                self.cols.append(np.ravel(di))
                self.vals.append(np.ravel(c * ew * dw))

    def matrix(self):
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals).astype(complex)
        return sp.coo_matrix((v, (r, c)), shape=(self.n, self.n)).tocsr()


def _restrict_and_scale(S, W, keep):
    S = S[keep][:, keep]
    sw = np.sqrt(W[keep])
    D = sp.diags(1.0 / sw)
    M = (D @ S @ D).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return M, sw


def _strip_forms(cs: CoefficientSet, g: Grid, alpha_sign: float = 1.0):
    """Form matrices of the strip split by their power of eps.

    With x_n = eps*xi every stencil term scales as a fixed power of eps, so
    S(eps) = S[-1]/eps + S[0] + eps*S[1] and W(eps) = eps*W1.  Returns the
    three matrices on the full node set, W1 and the node index array.
    """
    Nx, Nt, hx = g.Nx, g.Nt, g.hx
    hxi = 1.0 / (Nt - 1)
    xs, xis = g.xs, g.xis
    xm = 0.5 * (xs[:-1] + xs[1:])
    xim = 0.5 * (xis[:-1] + xis[1:])
    om = g.omega

    A22 = cs.grid("A22", xs, xim).real
    A11 = cs.grid("A11", xm, xis).real
    if np.any(A22 <= 0) or np.any(A11 <= 0):
        raise HypothesisError("disc.assemble_perturbed: diffusion coefficient not positive on the stencil")
    A12 = cs.grid("A12", xm, xim).real
    A21 = cs.grid("A21", xm, xim).real
    A1 = cs.grid("A1", xm, xis)
    A2 = cs.grid("A2", xs, xim)
    A0 = cs.grid("A0", xs, xis)
    al = alpha_sign * cs.points("alpha", xs).real

    a, m = np.meshgrid(np.arange(Nx), np.arange(Nt), indexing="ij")
    idx = g.index(a, m)
    f = {p: _Form(Nx * Nt) for p in (-1, 0, 1)}

    # x-edges: (a, m) -> (a+1, m), weight hx * eps * omega
    p, q = idx[:-1, :], idx[1:, :]
    wx = hx * om[None, :]
    dx = [(q, 1 / hx), (p, -1 / hx)]
    avx = [(p, 0.5), (q, 0.5)]
    f[1].add(wx * A11, dx, dx)
    f[1].add(wx * A1, dx, avx)
    f[1].add(wx * np.conj(A1), avx, dx)

    # y-edges: (a, m) -> (a, m+1), weight hx * eps * hxi, d/dy = d/dxi / eps
    p, q = idx[:, :-1], idx[:, 1:]
    dy = [(q, 1 / hxi), (p, -1 / hxi)]
    avy = [(p, 0.5), (q, 0.5)]
    f[-1].add(hx * hxi * A22, dy, dy)
    f[0].add(hx * hxi * A2, dy, avy)
    f[0].add(hx * hxi * np.conj(A2), avy, dy)

    # cells: cell-averaged gradients for the mixed terms
    c00, c10 = idx[:-1, :-1], idx[1:, :-1]
    c01, c11 = idx[:-1, 1:], idx[1:, 1:]
    area = hx * hxi
    gx = [(c10, 0.5 / hx), (c00, -0.5 / hx), (c11, 0.5 / hx), (c01, -0.5 / hx)]
    gy = [(c01, 0.5 / hxi), (c00, -0.5 / hxi), (c11, 0.5 / hxi), (c10, -0.5 / hxi)]
    f[0].add(area * A12, gy, gx)
    f[0].add(area * A21, gx, gy)

    # nodes: potential and the boundary term of the Robin condition
    W1 = (hx * om[None, :] * np.ones((Nx, 1))).ravel()
    f[1].add(hx * om[None, :] * A0, [(idx, 1.0)], [(idx, 1.0)])
    f[0].add(1j * hx * al, [(idx[:, -1], 1.0)], [(idx[:, -1], 1.0)])
    f[0].add(-1j * hx * al, [(idx[:, 0], 1.0)], [(idx[:, 0], 1.0)])
    return {p: f[p].matrix() for p in f}, W1, idx


def _strip_reflection(g: Grid) -> np.ndarray:
    n_int = g.Nx - 2
    return (np.arange(n_int)[:, None] * g.Nt + (g.Nt - 1 - np.arange(g.Nt))[None, :]).ravel()


def assemble_perturbed(cs: CoefficientSet, g: Grid, alpha_sign: float = 1.0) -> DiscreteOperator:
    """Strip operator with the imaginary Robin condition on both faces.

    ``alpha_sign=-1`` assembles the same problem with alpha replaced by -alpha.
    """
    S, W1, idx = _strip_forms(cs, g, alpha_sign)
    e = g.eps
    M, sw = _restrict_and_scale(S[-1] / e + S[0] + e * S[1], e * W1, idx[1:-1].ravel())
    return DiscreteOperator(M, "perturbed", g.xs, _strip_reflection(g), sw, g, alpha_sign)


def discrete_limit_operator(cs: CoefficientSet, X: float, Nx: int, Nt: int) -> DiscreteOperator:
    """Line operator reached by the strip discretisation as eps -> 0.

    The form splits as S[-1]/eps + S[0] + eps*S[1]; S[-1] acts within each
    transverse column and its kernel is the xi-constant fields.  Reducing
    onto that kernel (a discrete Schur complement) gives

        H_h = (Q^T S[1] Q - Q^T S[0] S[-1]^+ S[0] Q) / hx,

    where Q extends a line vector constantly in xi.  The eigenvalues of the
    strip matrix converge to those of H_h as eps -> 0 at fixed (Nx, Nt), so
    H_h carries the same spatial truncation error as the strip runs.
    """
    g = build_grid(X, Nx, 1.0, Nt)
    S, W1, idx = _strip_forms(cs, g)
    keep = idx[1:-1].ravel()
    S = {p: S[p][keep][:, keep].tocsc() for p in S}
    n1 = Nx - 2
    ns = n1 * Nt
    col = np.repeat(np.arange(n1), Nt)
    Q = sp.csc_matrix((np.ones(ns), (np.arange(ns), col)), shape=(ns, n1))
    # S[-1] is singular on each column; border it with the mean-zero constraint
    K = sp.bmat([[S[-1], Q], [Q.T, None]]).tocsc()
    lu = sp.linalg.splu(K.astype(complex))
    R = (S[0] @ Q).tocsc()
    out = sp.lil_matrix((n1, n1), dtype=complex)
    # columns five x-nodes apart have disjoint footprints through S[0] S[-1]^+ S[0]
    for c in range(5):
        cols = np.arange(c, n1, 5)
        rhs = np.asarray(R[:, cols].sum(axis=1)).ravel()
        y = lu.solve(np.concatenate([rhs, np.zeros(n1)]))[:ns]
        z = Q.T @ (S[0] @ y)
        for j in cols:
            lo, hi = max(0, j - 2), min(n1, j + 3)
            out[lo:hi, j] = z[lo:hi][:, None]
    H = ((Q.T @ S[1] @ Q) - out.tocsr()) / g.hx
    H = sp.csr_matrix(H)
    H.eliminate_zeros()
    return DiscreteOperator(H, "limiting", g.xs, np.arange(n1), np.full(n1, np.sqrt(g.hx)))


def assemble_limiting_from(A11_mid, A1_mid, A00_nodes, xs) -> DiscreteOperator:
    """Line operator from coefficients at the x-midpoints (A11, A1) and nodes (A00)."""
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    hx = xs[1] - xs[0]
    if not np.allclose(np.diff(xs), hx, rtol=1e-12, atol=0):
        raise ValueError("disc.assemble_limiting: x-grid must be uniform")
    A11_mid = np.asarray(A11_mid, dtype=float)
    if np.any(A11_mid <= 0):
        raise HypothesisError("disc.assemble_limiting: averaged diffusion is not positive")
    idx = np.arange(n)
    p, q = idx[:-1], idx[1:]
    f = _Form(n)
    dx = [(q, 1 / hx), (p, -1 / hx)]
    av = [(p, 0.5), (q, 0.5)]
    f.add(hx * A11_mid, dx, dx)
    f.add(hx * np.asarray(A1_mid), dx, av)
    f.add(hx * np.conj(A1_mid), av, dx)
    f.add(hx * np.asarray(A00_nodes), [(idx, 1.0)], [(idx, 1.0)])
    S = f.matrix()
    M, sw = _restrict_and_scale(S, np.full(n, hx), idx[1:-1])
    herm = sp.linalg.norm(M - M.conj().T) / max(sp.linalg.norm(M), 1e-300)
    if herm > 1e-12:
        raise ValueError(f"disc.assemble_limiting: matrix not Hermitian (relative defect {herm:.2e})")
    return DiscreteOperator(M, "limiting", xs, np.arange(n - 2), sw)


def assemble_limiting(lc: LimitingCoefficients, xs) -> DiscreteOperator:
    """Line operator from tabulated limiting coefficients.

    ``lc`` is tabulated either on ``xs`` itself (midpoint values are then
    averaged) or on the half-step grid with 2*len(xs)-1 points, in which case
    midpoint values are exact.
    """
    xs = np.asarray(xs, dtype=float)
    if lc.xs.size == 2 * xs.size - 1 and np.allclose(lc.xs[::2], xs):
        return assemble_limiting_from(lc.A11[1::2], lc.A1[1::2], lc.A00[::2], xs)
    if lc.xs.size == xs.size and np.allclose(lc.xs, xs):
        mid = lambda v: 0.5 * (v[:-1] + v[1:])
        return assemble_limiting_from(mid(lc.A11), mid(lc.A1), lc.A00, xs)
    raise ValueError("disc.assemble_limiting: coefficients not tabulated on the given grid")


def limiting_operator(cs: CoefficientSet, X: float, Nx: int, quad: QuadRule = DEFAULT_QUAD) -> DiscreteOperator:
    """Convenience: average the coefficients on the half-step grid and assemble."""
    xs = np.linspace(-X, X, Nx)
    xh = np.linspace(-X, X, 2 * Nx - 1)
    return assemble_limiting(limiting_coefficients(cs, xh, quad), xs)


def transverse_average(u, g: Grid) -> np.ndarray:
    u = np.asarray(u)
    if u.size != g.Nx * g.Nt:
        raise ValueError(f"disc.transverse_average: expected {g.Nx * g.Nt} values, got {u.size}")
    return u.reshape(g.Nx, g.Nt) @ g.omega


def embed(v, g: Grid) -> np.ndarray:
    v = np.asarray(v)
    if v.size != g.Nx:
        raise ValueError(f"disc.embed: expected {g.Nx} values, got {v.size}")
    return np.repeat(v, g.Nt)


def dump_coo(op: DiscreteOperator, path) -> None:
    """Write the matrix as 'row col re im' lines with 0-based indices."""
    M = op.matrix.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(M.row, M.col, M.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
