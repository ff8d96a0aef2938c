"""Convergence sweeps in eps, rate fitting and Richardson extrapolation.

Eigenvalue errors are measured against the eps -> 0 limit of the same strip
discretisation (:func:`thinspec.disc.discrete_limit_operator`) by default.
That limit carries the spatial truncation error of the strip runs, so the
differences isolate the eps-dependence; the gap to the line-stencil limiting
eigenvalue is recorded alongside as the spatial floor.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import asymptote, disc, spectral
from .cell import DEFAULT_QUAD, w_profile
from .model import CoefficientSet

FLOOR_RATIO = 0.1


@dataclass
class ConvergenceTable:
    """One sweep: per-eps value and error, extra columns and the fitted rate.

    ``status`` is "ok", "floor-limited" (the spatial-floor guard fired; the
    rate is then withheld and kept in ``meta['raw_rate']``) or "unchecked".
    """
    quantity: str
    problem: str
    eps: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)
    fitted_rate: float = float("nan")
    r2: float = float("nan")
    floor_ratio: float = float("nan")
    status: str = "unchecked"

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if np.any(np.diff(self.eps) >= 0):
            raise ValueError("converge.ConvergenceTable: eps must be strictly decreasing")

    @property
    def floor_limited(self) -> bool:
        return self.status == "floor-limited"

    def fit(self):
        self.fitted_rate, self.r2 = _safe_fit(self.eps, self.errors)
        return self.fitted_rate

    def apply_guard(self, ratio: float):
        self.floor_ratio = float(ratio)
        if ratio > FLOOR_RATIO:
            self.status = "floor-limited"
            self.meta["raw_rate"] = self.fitted_rate
            self.fitted_rate = float("nan")
        else:
            self.status = "ok"

    def header(self) -> List[str]:
        return ["eps", "re_value", "im_value", "error"] + list(self.extra) + ["meta"]

    def rows(self):
        meta = ";".join(f"{k}={fmt(v) if isinstance(v, (float, int, complex, np.number)) else v}"
                        for k, v in self.meta.items())
        for i, e in enumerate(self.eps):
            v = complex(self.values[i])
            yield ([e, v.real, v.imag, self.errors[i]] + [self.extra[c][i] for c in self.extra]
                   + [meta if i == 0 else ""])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows():
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
        w.writerow(["fitted_rate", fmt(self.fitted_rate)])
        w.writerow(["r2", fmt(self.r2)])
        w.writerow(["floor_guard_status", self.status, fmt(self.floor_ratio)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"quantity": self.quantity, "problem": self.problem, "eps": self.eps.tolist(),
                "re_value": np.real(self.values).tolist(), "im_value": np.imag(self.values).tolist(),
                "error": np.asarray(self.errors, dtype=float).tolist(),
                **{k: np.asarray(v).tolist() for k, v in self.extra.items()},
                "fitted_rate": _json_num(self.fitted_rate), "r2": _json_num(self.r2),
                "floor_ratio": _json_num(self.floor_ratio), "floor_guard_status": self.status,
                "meta": {k: (_json_num(v) if isinstance(v, (float, np.floating)) else v)
                         for k, v in self.meta.items()}}


def _json_num(v):
    v = float(v)
    return None if not np.isfinite(v) else v


def fmt(v) -> str:
    """Fixed 17-significant-digit formatting (complex as re+imj)."""
    if isinstance(v, (complex, np.complexfloating)):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def fit_rate(eps, errors):
    """Least-squares slope of log(error) against log(eps): (slope, intercept, r2)."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size != err.size:
        raise ValueError("converge.fit_rate: eps and errors differ in length")
    if eps.size < 3:
        raise ValueError("converge.fit_rate: need at least three points")
    if np.any(err <= 0) or np.any(eps <= 0):
        raise ValueError("converge.fit_rate: errors and eps must be positive")
    x, y = np.log(eps), np.log(err)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - A @ [slope, icpt]) ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def richardson(eps, values, p0: int = 1, ratio: float = 2.0):
    """Extrapolate values(eps) to eps = 0 with the full Richardson tableau.

    Assumes values = g0 + c1 eps^p0 + c2 eps^(p0+1) + ... on a sequence that
    shrinks by ``ratio``.  Returns (estimate, error estimate, tableau); the
    error estimate is the last increment along the diagonal.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(values)
    order = np.argsort(-eps)
    eps, vals = eps[order], vals[order]
    if eps.size < 3:
        raise ValueError("converge.richardson: need at least three values")
    if not np.allclose(eps[:-1] / eps[1:], ratio, rtol=1e-9):
        raise ValueError(f"converge.richardson: eps must shrink by a constant ratio {ratio}")
    n = eps.size
    T = np.full((n, n), np.nan, dtype=vals.dtype if np.iscomplexobj(vals) else float)
    T[:, 0] = vals
    for j in range(1, n):
        f = ratio ** (p0 + j - 1) - 1.0
        for i in range(j, n):
            T[i, j] = T[i, j - 1] + (T[i, j - 1] - T[i - 1, j - 1]) / f
    est = T[n - 1, n - 1]
    err = abs(T[n - 1, n - 1] - T[n - 1, n - 2])
    return est, float(err), T


def _pmap(fn: Callable, items: Sequence, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _check_eps(eps_list):
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if eps.size < 2 or np.any(eps <= 0):
        raise ValueError("converge: need at least two positive eps values")
    return eps


def _strip_eig(cs, X, Nx, Nt, eps, shift):
    """Perturbed eigenvalue nearest ``shift``; refuses an ambiguous match."""
    M = disc.assemble_perturbed(cs, disc.build_grid(X, Nx, eps, Nt))
    rep = spectral.eigs_near(M, shift, 2)
    a, b = rep.pairs
    da, db = abs(a.lam - shift), abs(b.lam - shift)
    if db - da < 1e-3 * abs(a.lam - b.lam) + 1e-14:
        raise spectral.NumericalError(f"converge.sweep_eigenvalue: tracking collision at eps={eps:g} "
                                      f"({a.lam:.6g} and {b.lam:.6g} equidistant from the shift); refine the grid")
    return a.lam, a.residual


def limit_eigenvalue(cs, X, Nx, Nt, sigma):
    """(lambda0 of the eps -> 0 strip limit, lambda0 of the line stencil)."""
    l_h = spectral.eigs_near(disc.discrete_limit_operator(cs, X, Nx, Nt), sigma, 1).eigenvalues[0]
    l_0 = spectral.eigs_near(disc.limiting_operator(cs, X, Nx), sigma, 1).eigenvalues[0]
    return complex(l_h), complex(l_0)


def sweep_eigenvalue(cs: CoefficientSet, eps_list, X: float = 12.0, Nx: int = 301, Nt: int = 17,
                     sigma: float = -1.0, reference: str = "discrete",
                     expansion: Optional[asymptote.AsymptoticExpansion] = None,
                     jobs: int = 1, floor_guard: bool = True) -> ConvergenceTable:
    """Perturbed eigenvalue nearest the limiting one for every eps.

    The table's error is |lambda - lambda0|; the extra column err1 holds
    |lambda - lambda0 - eps Lambda1|, and |Im lambda| and the solver residual
    are recorded too.  ``reference`` selects lambda0: "discrete" (eps -> 0
    limit of the strip scheme) or "limiting" (line stencil).  Each run is
    shifted at lambda0 + eps Lambda1.
    """
    if reference not in ("discrete", "limiting"):
        raise ValueError("converge.sweep_eigenvalue: reference must be 'discrete' or 'limiting'")
    eps = _check_eps(eps_list)
    l_h, l_0 = limit_eigenvalue(cs, X, Nx, Nt, sigma)
    ref = (l_h if reference == "discrete" else l_0).real
    if expansion is None:
        expansion = asymptote.expand(cs, X, Nx, ref, order=1)
    lam1 = float(expansion.Lambda1[0])
    out = _pmap(lambda e: _strip_eig(cs, X, Nx, Nt, e, ref + e * lam1), eps, jobs)
    lam = np.array([o[0] for o in out])
    res = np.array([o[1] for o in out])
    tab = ConvergenceTable("eigenvalue", cs.name, eps, lam, np.abs(lam - ref),
                           {"err1": np.abs(lam - ref - eps * lam1), "abs_im": np.abs(lam.imag),
                            "residual": res})
    tab.meta.update(lambda0=ref, lambda0_discrete=l_h.real, lambda0_line=l_0.real,
                    spatial_gap=abs(l_h - l_0), Lambda1=lam1, reference=reference, X=X, Nx=Nx, Nt=Nt)
    tab.fit()
    tab.meta["rate_err1"], tab.meta["r2_err1"] = _safe_fit(eps, tab.extra["err1"])
    if floor_guard:
        # one refinement step at the largest eps: how much of the error is spatial
        Nx2, Nt2 = 2 * Nx - 1, 2 * Nt - 1
        l2h, l20 = limit_eigenvalue(cs, X, Nx2, Nt2, sigma)
        ref2 = (l2h if reference == "discrete" else l20).real
        lam2, _ = _strip_eig(cs, X, Nx2, Nt2, eps[0], ref2 + eps[0] * lam1)
        coarse = tab.errors[0]
        tab.apply_guard(abs(coarse - abs(lam2 - ref2)) / max(coarse, 1e-300))
    return tab


def _safe_fit(eps, err):
    """(rate, r2) over the rows with positive error; NaN with fewer than three."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = err > 0
    if ok.sum() < 3:
        return float("nan"), float("nan")
    slope, _, r2 = fit_rate(eps[ok], err[ok])
    return slope, r2


def default_source(xs) -> np.ndarray:
    return 1.0 / np.cosh(np.asarray(xs, dtype=float))


def resolvent_point(cs: CoefficientSet, X: float, Nx: int) -> float:
    """Default spectral parameter: one below the bottom of the limiting spectrum."""
    M0 = disc.limiting_operator(cs, X, Nx)
    A = M0.matrix.toarray()
    return float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0] - 1.0)


def _h1_error(e, g: disc.Grid):
    """Discrete W_2^1 norm of a nodal strip field (forward differences)."""
    e = e.reshape(g.Nx, g.Nt)
    wy = g.eps * g.omega
    l2 = g.hx * np.sum(wy[None, :] * np.abs(e) ** 2)
    gx = g.hx * np.sum(wy[None, :] * np.abs(np.diff(e, axis=0) / g.hx) ** 2)
    gy = g.hx * g.ht * np.sum(np.abs(np.diff(e, axis=1) / g.ht) ** 2)
    return np.sqrt(l2 + gx + gy)


def _resolvent_run(cs, X, Nx, Nt, eps, lam, u0, du0, f_line, wprof):
    g = disc.build_grid(X, Nx, eps, Nt)
    M = disc.assemble_perturbed(cs, g)
    F = disc.embed(f_line, g)
    ue = M.nodal(spectral.solve_linear(M, lam, M.scaled(F)))
    fnorm = np.linalg.norm(M.scaled(F))
    base = ue - disc.embed(u0, g)
    l2 = np.linalg.norm(M.scaled(base)) / fnorm
    h1_plain = _h1_error(base, g) / fnorm
    h1 = _h1_error(base - eps * wprof(g).ravel(), g) / fnorm
    return l2, h1, h1_plain


def sweep_resolvent(cs: CoefficientSet, eps_list, X: float = 12.0, Nx: int = 301, Nt: int = 17,
                    lam: Optional[complex] = None, f_line: Optional[np.ndarray] = None,
                    jobs: int = 1):
    """Tables A (L2, no corrector) and B (W_2^1 with the corrector) for one lambda.

    u_eps solves the strip problem with the xi-independent source f(x);
    u0 solves the line problem with the same f.  Errors are relative to the
    strip L2 norm of f.  Table B also carries the uncorrected W_2^1 error.
    """
    eps = _check_eps(eps_list)
    lam = resolvent_point(cs, X, Nx) if lam is None else complex(lam)
    xs = np.linspace(-X, X, Nx)
    f_line = default_source(xs) if f_line is None else np.asarray(f_line, dtype=complex)
    f_line = f_line.astype(complex)
    f_line[[0, -1]] = 0.0
    M0 = disc.limiting_operator(cs, X, Nx)
    u0 = M0.nodal(spectral.solve_linear(M0, lam, M0.scaled(f_line)))
    du0 = np.gradient(u0, xs[1] - xs[0])
    cache = {}

    def wprof(g):
        key = (g.Nx, g.Nt)
        if key not in cache:
            cache[key] = w_profile(cs, u0, du0, xs, DEFAULT_QUAD, g.xis)
        return cache[key]

    out = _pmap(lambda e: _resolvent_run(cs, X, Nx, Nt, e, lam, u0, du0, f_line, wprof), eps, jobs)
    l2 = np.array([o[0] for o in out])
    h1 = np.array([o[1] for o in out])
    h1p = np.array([o[2] for o in out])
    meta = dict(lam_re=lam.real, lam_im=lam.imag, X=X, Nx=Nx, Nt=Nt)
    A = ConvergenceTable("resolvent_L2", cs.name, eps, l2, l2, meta=dict(meta))
    B = ConvergenceTable("resolvent_H1", cs.name, eps, h1, h1, {"error_uncorrected": h1p}, meta=dict(meta))
    A.fit()
    B.fit()
    return A, B


def sweep_residual(ex: asymptote.AsymptoticExpansion, cs: CoefficientSet, N: int, eps_list,
                   Nt: int = 129, k: int = 0, floor_guard: bool = True) -> ConvergenceTable:
    """Residual r(eps, N) of the truncated expansion on every eps.

    The floor guard recomputes the largest-eps residual with the strip grid
    and the expansion refined once.
    """
    eps = _check_eps(eps_list)
    X = float(ex.xs[-1])
    Nx = ex.xs.size
    r = np.array([asymptote.residual_check(ex, cs, disc.build_grid(X, Nx, e, Nt), N, k) for e in eps])
    face = np.array([ex.face_defects[(k, N, e)] for e in eps])
    tab = ConvergenceTable(f"residual_{N}", cs.name, eps, r, r, {"face_defect": face},
                           meta=dict(N=N, X=X, Nx=Nx, Nt=Nt, lambda0=ex.lambda0))
    tab.fit()
    if floor_guard:
        ex2 = asymptote.expand(cs, X, 2 * Nx - 1, ex.lambda0, quad=ex._ops.q, m=ex.m,
                               scheme=ex._ops.scheme)
        r2 = asymptote.residual_check(ex2, cs, disc.build_grid(X, 2 * Nx - 1, eps[0], 2 * Nt - 1), N, k)
        tab.apply_guard(abs(r[0] - r2) / max(r[0], 1e-300))
    return tab
