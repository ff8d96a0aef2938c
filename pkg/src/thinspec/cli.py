"""Command-line front end.

    thinspec EXPERIMENT [--config FILE] [--problem NAME|INLINE] [--set k=v ...]
                        [--grid X,Nx,Nt] [--eps e1,e2,...] [--lambda re,im]
                        [--shift s] [--k n] [--out DIR] [--jobs n] [--dry-run]

Exit codes: 0 success, 1 bad input, 2 hypothesis violation, 3 numerical
failure.  Every report is written atomically (temporary file, then rename).
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from . import asymptote, cell, coeffexpr, converge, disc, model, spectral
from .converge import fmt

EXPERIMENTS = ("validate", "limiting", "spectrum", "asymptotics", "sweep-eig", "sweep-res", "residual")
EXIT_OK, EXIT_INPUT, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULTS = {
    "grid": {"X": "12", "Nx": "301", "Nt": "17"},
    "sweep": {"eps": "0.2,0.1,0.05,0.025", "reference": "discrete"},
    "solver": {"k": "1", "tol": "1e-10", "shift": "-1"},
    "quad": {"panels": "8", "order": "8"},
    "residual": {"N": "1,2,3", "Nt": "129"},
    "run": {"out": "thinspec_out", "jobs": "1"},
}


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    problem: str
    coeffs: Dict[str, str]
    params: Dict[str, float]
    X: float
    Nx: int
    Nt: int
    eps: List[float]
    reference: str
    k: int
    tol: float
    shift: float
    m: Optional[int]
    lam: Optional[complex]
    panels: int
    order: int
    residual_N: List[int]
    residual_Nt: int
    out: str
    jobs: int
    extra: Dict[str, str] = field(default_factory=dict)

    def coefficient_set(self) -> model.CoefficientSet:
        if self.problem in model.CATALOG_NAMES:
            base = model.catalog(self.problem)
            params = dict(base.params)
            unknown = set(self.params) - set(params)
            if unknown:
                raise InputError(f"cli: problem {self.problem!r} has no parameters {sorted(unknown)}")
            params.update(self.params)
            src = base.sources()
            src.update(self.coeffs)
            if "A12" in self.coeffs and "A21" not in self.coeffs:
                src["A21"] = self.coeffs["A12"]
            return model.from_strings(src, params, self.problem)
        return model.from_strings(self.coeffs, self.params, "inline")

    def quad(self) -> cell.QuadRule:
        return cell.QuadRule(self.panels, self.order)

    def to_ini(self, cs: model.CoefficientSet) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"experiment": self.experiment, "out": self.out, "jobs": str(self.jobs)}
        cp["problem"] = {"name": self.problem, **{k: f'"{v}"' for k, v in cs.sources().items()}}
        cp["params"] = {k: fmt(v) for k, v in sorted(cs.params.items())}
        cp["grid"] = {"X": fmt(self.X), "Nx": str(self.Nx), "Nt": str(self.Nt)}
        cp["sweep"] = {"eps": ",".join(fmt(e) for e in self.eps), "reference": self.reference}
        solver = {"k": str(self.k), "tol": fmt(self.tol), "shift": fmt(self.shift)}
        if self.m is not None:
            solver["m"] = str(self.m)
        if self.lam is not None:
            solver["lambda"] = f"{fmt(self.lam.real)},{fmt(self.lam.imag)}"
        cp["solver"] = solver
        cp["quad"] = {"panels": str(self.panels), "order": str(self.order)}
        cp["residual"] = {"N": ",".join(map(str, self.residual_N)), "Nt": str(self.residual_Nt)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _floats(text: str, name: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"cli: {name} must be a comma-separated list of numbers, got {text!r}") from None


def _inline(text: str) -> Dict[str, str]:
    out = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise InputError(f"cli: inline coefficient {part!r} must read NAME=expression")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _unquote(v: str) -> str:
    v = v.strip()
    return v[1:-1] if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'" else v


def resolve(args: argparse.Namespace) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if args.config:
        if not os.path.isfile(args.config):
            raise InputError(f"cli: config file {args.config!r} not found")
        cp.read(args.config)
    prob = dict(cp["problem"]) if cp.has_section("problem") else {}
    name = _unquote(prob.pop("name", "")) if prob else ""
    coeffs = {k: _unquote(v) for k, v in prob.items()}
    params = {k: float(v) for k, v in cp["params"].items()} if cp.has_section("params") else {}
    if args.problem:
        if "=" in args.problem:
            name = "inline"
            coeffs = _inline(args.problem)
        else:
            name = args.problem
    for c in args.coef or []:
        coeffs.update(_inline(c))
    if not name:
        raise InputError("cli: no problem given (use --problem or a [problem] section)")
    if name != "inline" and name not in model.CATALOG_NAMES:
        raise InputError(f"cli: unknown problem {name!r}; choose from {', '.join(model.CATALOG_NAMES)} "
                         f"or give inline coefficients NAME=expr;...")
    for s in args.set or []:
        if "=" not in s:
            raise InputError(f"cli: --set expects key=value, got {s!r}")
        k, v = s.split("=", 1)
        try:
            params[k.strip()] = float(v)
        except ValueError:
            raise InputError(f"cli: --set {k}: value {v!r} is not a number") from None
    g = cp["grid"]
    X, Nx, Nt = float(g["X"]), int(g["Nx"]), int(g["Nt"])
    if args.grid:
        parts = args.grid.split(",")
        if len(parts) != 3:
            raise InputError("cli: --grid expects X,Nx,Nt")
        X, Nx, Nt = float(parts[0]), int(parts[1]), int(parts[2])
    eps = _floats(args.eps or cp["sweep"]["eps"], "eps")
    if not eps or any(e <= 0 for e in eps):
        raise InputError("cli: eps values must be positive")
    sol = cp["solver"]
    lam_txt = args.lam or sol.get("lambda")
    lam = None
    if lam_txt:
        v = _floats(lam_txt, "lambda")
        if len(v) not in (1, 2):
            raise InputError("cli: --lambda expects re or re,im")
        lam = complex(v[0], v[1] if len(v) == 2 else 0.0)
    jobs = int(args.jobs if args.jobs is not None else cp["run"]["jobs"])
    if jobs < 1:
        raise InputError("cli: --jobs must be at least 1")
    cfg = RunConfig(
        experiment=args.experiment, problem=name, coeffs=coeffs, params=params,
        X=X, Nx=Nx, Nt=Nt, eps=eps, reference=cp["sweep"]["reference"],
        k=int(args.k if args.k is not None else sol["k"]), tol=float(sol["tol"]),
        shift=float(args.shift if args.shift is not None else sol["shift"]), lam=lam,
        m=args.m if args.m is not None else (int(sol["m"]) if sol.get("m") else None),
        panels=int(cp["quad"]["panels"]), order=int(cp["quad"]["order"]),
        residual_N=[int(n) for n in _floats(cp["residual"]["N"], "N")],
        residual_Nt=int(cp["residual"]["Nt"]),
        out=args.out or cp["run"]["out"], jobs=jobs)
    disc.build_grid(cfg.X, cfg.Nx, cfg.eps[0], cfg.Nt)  # bounds check
    if cfg.k < 1:
        raise InputError("cli: k must be at least 1")
    return cfg


# ---------------------------------------------------------------- output


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    import csv
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": _jsonable(v.real), "im": _jsonable(v.imag)}
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(f"{v:.17g}") if np.isfinite(v) else None
    return v


class Report:
    def __init__(self, out: str):
        self.out = out
        self.files: Dict[str, str] = {}
        self.summary: Dict[str, object] = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def flush(self):
        for name, text in self.files.items():
            write_atomic(os.path.join(self.out, name), text)
        write_atomic(os.path.join(self.out, "summary.json"),
                     json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- experiments


def run_validate(cfg, cs, rep: Report) -> int:
    hr = model.validate_symmetry(cs)
    consts = model.estimate_constants(cs)
    for i in range(4):
        setattr(hr, f"c{i}", getattr(consts, f"c{i}"))
    rows = [(k, v, int(ok)) for k, v, ok in hr.rows()]
    rows += [(f"c{i}", getattr(hr, f"c{i}"), 1) for i in range(4)]
    rep.add("validate.csv", _csv(["check", "value", "ok"], rows))
    rep.summary.update(validate={"ok": hr.ok, "max_violation": hr.max_violation,
                                 "c0": hr.c0, "c1": hr.c1, "c2": hr.c2, "c3": hr.c3,
                                 "sample_grid": hr.sample_grid})
    return EXIT_OK if hr.ok else EXIT_HYPOTHESIS


def run_limiting(cfg, cs, rep: Report) -> int:
    xs = np.linspace(-cfg.X, cfg.X, cfg.Nx)
    lc = cell.limiting_coefficients(cs, xs, cfg.quad())
    rep.add("limiting_coefficients.csv",
            _csv(["x", "A11", "re_A1", "im_A1", "re_A00", "im_A00"],
                 list(lc.rows())))
    M0 = disc.limiting_operator(cs, cfg.X, cfg.Nx, cfg.quad())
    sr = spectral.eigs_near(M0, cfg.shift, cfg.k, cfg.tol)
    rep.add("limiting_eigenvalues.csv", _csv(["k", "re_lambda", "im_lambda", "residual"],
                                             [(k, p.lam.real, p.lam.imag, p.residual)
                                              for k, p in enumerate(sr.pairs)]))
    rep.summary.update(limiting={"eigenvalues": sr.eigenvalues})
    return EXIT_OK


def run_spectrum(cfg, cs, rep: Report) -> int:
    consts = model.estimate_constants(cs)
    summary = {}
    rows = []
    for e in cfg.eps:
        g = disc.build_grid(cfg.X, cfg.Nx, e, cfg.Nt)
        M = disc.assemble_perturbed(cs, g)
        Mm = disc.assemble_perturbed(cs, g, alpha_sign=-1.0)
        sr = spectral.eigs_near(M, cfg.shift, cfg.k, cfg.tol)
        sr.symmetry_residuals = spectral.symmetry_residuals(M, Mm)
        spectral.enclosure_check(sr, consts)
        for row in sr.rows():
            rows.append((e,) + tuple(row))
        summary[fmt(e)] = {"eigenvalues": sr.eigenvalues, "symmetry_residuals": sr.symmetry_residuals,
                           "enclosure": sr.enclosure}
    rep.add("spectrum.csv", _csv(["eps", "k", "re_lambda", "im_lambda", "residual", "re_pt_norm",
                                  "im_pt_norm", "in_enclosure"], rows))
    rep.summary.update(spectrum=summary)
    return EXIT_OK


def run_asymptotics(cfg, cs, rep: Report) -> int:
    ex = asymptote.expand(cs, cfg.X, cfg.Nx, cfg.shift, cfg.quad(), m=cfg.m)
    rep.add("asymptotics.csv", _csv(["k", "lambda0", "Lambda1", "Lambda2", "L_hermiticity_residual",
                                     "degenerate_flag"], ex.rows()))
    rep.summary.update(asymptotics={"lambda0": ex.lambda0, "m": ex.m, "Lambda1": ex.Lambda1,
                                    "Lambda2": ex.Lambda2 if ex.Lambda2 is not None else [],
                                    "L": ex.L, "hermiticity": ex.hermiticity,
                                    "degenerate": ex.degenerate})
    return EXIT_OK


def run_sweep_eig(cfg, cs, rep: Report) -> int:
    tab = converge.sweep_eigenvalue(cs, cfg.eps, cfg.X, cfg.Nx, cfg.Nt, cfg.shift, cfg.reference,
                                    jobs=cfg.jobs)
    rep.add("sweep_eig.csv", tab.to_csv())
    rep.summary.update(sweep_eig=tab.summary())
    return EXIT_OK


def run_sweep_res(cfg, cs, rep: Report) -> int:
    A, B = converge.sweep_resolvent(cs, cfg.eps, cfg.X, cfg.Nx, cfg.Nt, cfg.lam, jobs=cfg.jobs)
    rep.add("sweep_res_L2.csv", A.to_csv())
    rep.add("sweep_res_H1.csv", B.to_csv())
    rep.summary.update(sweep_res={"L2": A.summary(), "H1": B.summary()})
    return EXIT_OK


def run_residual(cfg, cs, rep: Report) -> int:
    ex = asymptote.expand(cs, cfg.X, cfg.Nx, cfg.shift, cfg.quad(), m=cfg.m)
    out = {}
    for N in cfg.residual_N:
        tab = converge.sweep_residual(ex, cs, N, cfg.eps, cfg.residual_Nt)
        rep.add(f"residual_N{N}.csv", tab.to_csv())
        out[f"N{N}"] = tab.summary()
    rep.summary.update(residual=out)
    return EXIT_OK


RUNNERS = {"validate": run_validate, "limiting": run_limiting, "spectrum": run_spectrum,
           "asymptotics": run_asymptotics, "sweep-eig": run_sweep_eig, "sweep-res": run_sweep_res,
           "residual": run_residual}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thinspec", description="Spectra of PT-symmetric operators in thin strips.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="INI file with [problem] [params] [grid] [sweep] [solver] [quad] [residual] [run]")
    p.add_argument("--problem", help="catalog name, or inline coefficients 'A12=xi^2;A0=-2*sech(x)^2'")
    p.add_argument("--coef", action="append", help="override one coefficient, NAME=expression")
    p.add_argument("--set", action="append", help="parameter value, key=val")
    p.add_argument("--grid", help="X,Nx,Nt")
    p.add_argument("--eps", help="comma-separated thickness list")
    p.add_argument("--lambda", dest="lam", help="resolvent point re,im")
    p.add_argument("--shift", type=float, help="eigenvalue shift (real)")
    p.add_argument("--k", type=int, help="number of eigenvalues")
    p.add_argument("--m", type=int, help="cluster size for the asymptotic expansion (default: detect)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker threads for sweeps")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        cs = cfg.coefficient_set()
        if args.dry_run:
            sys.stdout.write(cfg.to_ini(cs))
            return EXIT_OK
        rep = Report(cfg.out)
        rep.summary.update(problem=cfg.problem, experiment=cfg.experiment, params=cs.params,
                           coefficients=cs.sources(), grid={"X": cfg.X, "Nx": cfg.Nx, "Nt": cfg.Nt},
                           seed=spectral.seed())
        if cfg.experiment != "validate":
            hr = model.validate_symmetry(cs)
            model.estimate_constants(cs)
            if not hr.ok:
                bad = [k for k, ok in hr.symmetry_ok.items() if not ok]
                raise model.HypothesisError(f"model.validate_symmetry: violated {', '.join(bad)}")
        code = RUNNERS[cfg.experiment](cfg, cs, rep)
        rep.summary["exit_code"] = code
        rep.flush()
        if code == EXIT_HYPOTHESIS:
            bad = [k for k, ok in model.validate_symmetry(cs).symmetry_ok.items() if not ok]
            print(f"thinspec: hypothesis violated: {', '.join(bad)}", file=sys.stderr)
        return code
    except model.HypothesisError as exc:
        print(f"thinspec: hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (spectral.NumericalError, cell.SolvabilityError, spla.ArpackError, np.linalg.LinAlgError) as exc:
        print(f"thinspec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError, KeyError, coeffexpr.ExprSyntaxError, coeffexpr.UnknownIdentifierError,
            coeffexpr.EvalError) as exc:
        print(f"thinspec: bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
