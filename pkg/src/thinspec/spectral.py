"""Eigenvalues, resolvent solves and PT diagnostics for the assembled matrices.

All vectors live in the scaled coordinates of :mod:`thinspec.disc`, so the
Euclidean inner product is the discrete L2 inner product.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .disc import DiscreteOperator

DEFAULT_SEED = 20240917


class NumericalError(RuntimeError):
    """Factorisation, convergence or degeneracy failure."""


class DegeneracyError(NumericalError):
    pass


def seed() -> int:
    return int(os.environ.get("THINSPEC_SEED", DEFAULT_SEED))


def _as_matrix(M):
    A = M.matrix if isinstance(M, DiscreteOperator) else M
    return A.tocsr() if sp.issparse(A) else sp.csr_matrix(np.asarray(A))


@dataclass
class EigenPair:
    lam: complex
    vector: np.ndarray
    residual: float
    pt_norm: complex = complex("nan")


@dataclass
class SpectrumReport:
    pairs: List[EigenPair]
    shift: complex
    enclosure: List[bool] = field(default_factory=list)
    symmetry_residuals: Optional[tuple] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    def rows(self):
        for k, p in enumerate(self.pairs):
            ok = self.enclosure[k] if k < len(self.enclosure) else ""
            yield (k, p.lam.real, p.lam.imag, p.residual, p.pt_norm.real, p.pt_norm.imag, ok)


def _is_hermitian(A, tol=1e-13) -> bool:
    if sp.issparse(A):
        d = spla.norm(A - A.conj().T)
        n = spla.norm(A)
    else:
        d = np.linalg.norm(A - A.conj().T)
        n = np.linalg.norm(A)
    return d <= tol * max(n, 1e-300)


def _fix_phase(v):
    k = np.argmax(np.abs(v))
    return v * (abs(v[k]) / v[k])


def _factor(A):
    try:
        A = sp.csc_matrix(A, copy=True)
        A.sort_indices()
        A.data = np.ascontiguousarray(A.data)
        lu = spla.splu(A)
    except RuntimeError as exc:  # exactly singular
        raise NumericalError(f"spectral: factorisation failed ({exc}); perturb the shift slightly") from None
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise NumericalError("spectral: singular factorisation; perturb the shift slightly")
    return lu


def dense_eigs(M, sigma: complex, k: int):
    """All eigenpairs by dense QR, returning the k nearest to sigma."""
    A = M.toarray() if sp.issparse(M) else np.asarray(M)
    if _is_hermitian(A):
        w, V = np.linalg.eigh(A)
        w = w.astype(complex)
    else:
        w, V = sla.eig(A)
    order = np.argsort(np.abs(w - sigma), kind="stable")[:k]
    return w[order], V[:, order]


def eigs_near(M, sigma: complex, k: int = 1, tol: float = 1e-10, method: str = "auto",
              P: Optional[np.ndarray] = None) -> SpectrumReport:
    """k eigenpairs nearest ``sigma`` by shift-invert Arnoldi (or dense QR)."""
    A = _as_matrix(M)
    n = A.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"spectral.eigs_near: need 1 <= k < {n}, got {k}")
    if P is None and isinstance(M, DiscreteOperator):
        P = M.reflection
    ncv = min(n - 1, 4 * k + 10)
    if method == "auto":
        method = "dense" if n <= 2 * ncv + 2 else "arpack"
    if method == "dense":
        w, V = dense_eigs(A, sigma, k)
    elif method == "arpack":
        herm = _is_hermitian(A) and complex(sigma).imag == 0
        real = herm and not (np.iscomplexobj(A.data) and np.any(A.data.imag != 0))
        dtype = float if real else complex
        shifted = (A - complex(sigma) * sp.identity(n, format="csc")).tocsc()
        lu = _factor(shifted.real.astype(float) if real else shifted)
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=dtype)
        rng = np.random.default_rng(seed())
        v0 = rng.standard_normal(n) + (1j * rng.standard_normal(n) if dtype is complex else 0)
        try:
            if herm:
                Ah = A.real.astype(float) if real else A
                w, V = spla.eigsh(Ah, k=k, sigma=float(np.real(sigma)), OPinv=op, ncv=ncv, tol=tol * 1e-2,
                                  v0=v0, maxiter=40 * n)
                w = w.astype(complex)
            else:
                w, V = spla.eigs(A.astype(complex), k=k, sigma=complex(sigma), OPinv=op, ncv=ncv,
                                 tol=tol * 1e-2, v0=v0.astype(complex), maxiter=40 * n)
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"spectral.eigs_near: Arnoldi did not converge ({exc})") from None
        order = np.argsort(np.abs(w - sigma), kind="stable")
        w, V = w[order], V[:, order]
    else:
        raise ValueError(f"spectral.eigs_near: unknown method {method!r}")
    pairs = []
    for j in range(len(w)):
        v = _fix_phase(V[:, j] / np.linalg.norm(V[:, j]))
        r = float(np.linalg.norm(A @ v - w[j] * v))
        pn = complex(np.vdot(v[P], v)) if P is not None else complex("nan")
        pairs.append(EigenPair(complex(w[j]), v, r, pn))
    worst = max(p.residual for p in pairs)
    scale = max(1.0, abs(sigma), max(abs(p.lam) for p in pairs))
    # residuals cannot drop below the rounding level of A itself
    floor = 1e3 * np.finfo(float).eps * spla.norm(A, 1)
    if worst > max(tol * scale * 1e3, floor):
        raise NumericalError(f"spectral.eigs_near: residual {worst:.2e} above tolerance")
    return SpectrumReport(pairs, complex(sigma))


def solve_linear(M, lam: complex, f, rtol: float = 1e-10, max_cond: float = 1e14) -> np.ndarray:
    """Solve (M - lam) u = f with sparse LU and one refinement step."""
    A = _as_matrix(M)
    n = A.shape[0]
    f = np.asarray(f, dtype=complex)
    B = (A - complex(lam) * sp.identity(n, format="csc")).tocsc().astype(complex)
    lu = _factor(B)
    u = lu.solve(f)
    u = u + lu.solve(f - B @ u)
    res = np.linalg.norm(B @ u - f)
    fn = max(np.linalg.norm(f), 1e-300)
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="H"), dtype=complex)
    cond = spla.norm(B, 1) * spla.onenormest(inv)
    if cond > max_cond or res > rtol * fn:
        raise NumericalError(f"spectral.solve_linear: ill-conditioned system (cond1 ~ {cond:.2e}, "
                             f"relative residual {res / fn:.2e}); lambda too close to the spectrum")
    return u


def pt_normalize(pairs: Sequence[EigenPair], P: np.ndarray, thresh: float = 1e-8) -> List[EigenPair]:
    """Recombine eigenvectors so that (v_k, P v_j) = delta_kj.

    The pairing is (u, Pv) = sum u * conj(Pv): linear in the first slot and
    conjugate-linear in the second, composed with the reflection.  The Gram
    matrix G_kj = (v_k, P v_j) is Hermitian; we apply G^{-1/2} (Loewdin).
    """
    V = np.column_stack([p.vector for p in pairs])
    G = V.T @ np.conj(V[P])  # G[k, j] = (v_k, P v_j)
    G = 0.5 * (G + G.conj().T)
    w, U = np.linalg.eigh(G)
    scale = np.linalg.norm(V, axis=0).max() ** 2
    if np.min(np.abs(w)) < thresh * scale:
        raise DegeneracyError(f"spectral.pt_normalize: P-pairing nearly degenerate (|eigenvalue| {np.min(np.abs(w)):.2e})")
    if np.min(w) < 0:
        raise DegeneracyError("spectral.pt_normalize: P-pairing is indefinite on this eigenspace")
    H = U @ np.diag(w ** -0.5) @ U.conj().T
    Vn = V @ H.T
    out = []
    for j, p in enumerate(pairs):
        v = Vn[:, j]
        out.append(EigenPair(p.lam, v, p.residual, complex(np.vdot(v[P], v))))
    return out


def pt_gram(pairs: Sequence[EigenPair], P) -> np.ndarray:
    V = np.column_stack([p.vector for p in pairs])
    return V.T @ np.conj(V[P])


def symmetry_residuals(M: DiscreteOperator, M_minus_alpha: DiscreteOperator, probes: int = 4):
    """Relative residuals of the three discrete symmetry identities.

    r1: ||M^H - P M P||_F / ||M||_F
    r2: max over seeded probes of ||PT(Mv) - M(PT v)|| / ||Mv||
    r3: ||M^H - M_{-alpha}||_F / ||M||_F
    """
    A, B = M.matrix, M_minus_alpha.matrix
    if A.shape != B.shape or not np.array_equal(M.reflection, M_minus_alpha.reflection):
        raise ValueError("spectral.symmetry_residuals: operators live on different grids")
    P = M.reflection
    nrm = spla.norm(A)
    AH = A.conj().T.tocsr()
    r1 = spla.norm(AH - A[P][:, P]) / nrm
    rng = np.random.default_rng(seed())
    r2 = 0.0
    for _ in range(probes):
        v = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
        Av = A @ v
        r2 = max(r2, np.linalg.norm(np.conj(Av)[P] - A @ np.conj(v[P])) / np.linalg.norm(Av))
    r3 = spla.norm(AH - B) / nrm
    return float(r1), float(r2), float(r3)


def enclosure_bound(re_lam, c0, c1, c2, c3) -> np.ndarray:
    """Right-hand side of the parabolic enclosure for |Im lambda|."""
    re_lam = np.asarray(re_lam, dtype=float)
    return c3 / np.sqrt(c0) * np.sqrt(np.abs(re_lam)) + (c1 + np.sqrt(c1 ** 2 + c0 * c2)) * c3 / c0 + c2


def enclosure_check(report, consts, margin: Optional[float] = None) -> List[bool]:
    """Per-eigenvalue verdict: True if inside the enclosure (plus margin)."""
    lams = report.eigenvalues if isinstance(report, SpectrumReport) else np.atleast_1d(np.asarray(report, dtype=complex))
    bound = enclosure_bound(lams.real, consts.c0, consts.c1, consts.c2, consts.c3)
    m = 1e-6 * (1 + np.abs(lams)) if margin is None else margin
    verdict = [bool(v) for v in np.abs(lams.imag) <= bound + m]
    if isinstance(report, SpectrumReport):
        report.enclosure = verdict
    return verdict
