"""Command-line front end: ``fraclap --alpha 0.8 --kappa uniform --N 64,128``.

Exit codes: 0 success, 2 invalid input, 3 solver failure (including rows
that did not converge), 4 SOE construction failure.
"""

from __future__ import annotations

import argparse
import io
import sys

import numpy as np

from .benchmark import (
    KAPPA_TOKENS,
    SCHEMES,
    SOLVERS,
    StudyConfig,
    StudyRow,
    resolve_kappa,
    run_convergence_study,
    threads_from_env,
)
from .mesh import MeshError, build_graded_mesh
from .operators import (
    AUDIT_CAP,
    ORIGINAL,
    audit_solvability,
    build_operator,
    materialize_fast_matrix,
)
from .soe import SoeBuildError
from .solver import PreconditionerError, SingularMatrixError

__all__ = ["CSV_COLUMNS", "ConfigError", "emit_table", "main", "parse_config", "run_main"]

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_SOE = 0, 2, 3, 4
CSV_COLUMNS = "alpha,kappa,N,scheme,solver,error_inf,order,iterations,wall_time_s"


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _float_list(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _int_token(tok):
    tok = tok.strip()
    if tok.startswith("2^"):
        return 2 ** int(tok[2:])
    val = float(tok)
    if val != int(val):
        raise ValueError(tok)
    return int(val)


def _N_list(text):
    try:
        return tuple(_int_token(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid N list {text!r}") from None


def _build_parser():
    p = _Parser(prog="fraclap", description="Fast collocation solver for the 1-D fractional Laplacian.")
    p.add_argument("--alpha", type=_float_list, required=True, help="comma-separated orders in (0, 2)")
    p.add_argument(
        "--kappa",
        default="uniform",
        help="comma-separated grading exponents >= 1 or tokens " + ", ".join(KAPPA_TOKENS),
    )
    p.add_argument("--N", type=_N_list, default=(64, 128, 256, 512), help="comma-separated even cell counts (2^k allowed)")
    p.add_argument("--scheme", choices=SCHEMES, default=ORIGINAL)
    p.add_argument("--solver", choices=SOLVERS, default="pf-bicgstab")
    p.add_argument("--eps", type=float, default=1e-8, help="SOE tolerance")
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual tolerance")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--band-l", type=int, default=2, help="preconditioner bandwidth parameter l (2l-1 diagonals)")
    p.add_argument("--output", choices=("csv", "markdown"), default="csv")
    p.add_argument("--repeats", type=int, default=1, help="timing repeats; the median is reported")
    p.add_argument("--clamp-kappa", action="store_true", help="lift resolved kappa values below 1 to 1")
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--audit", action="store_true", help="print the solvability audit of the first configuration")
    return p


def parse_config(argv) -> tuple[StudyConfig, bool]:
    """Parse and validate the command line; returns (config, audit flag)."""
    ns = _build_parser().parse_args(list(argv))
    kappas = tuple(k.strip() for k in ns.kappa.split(",") if k.strip())
    try:
        cfg = StudyConfig(
            alphas=ns.alpha,
            kappas=kappas,
            N_list=ns.N,
            scheme=ns.scheme,
            solver=ns.solver,
            eps_soe=ns.eps,
            tol=ns.tol,
            max_iter=ns.max_iter,
            band_l=ns.band_l,
            output=ns.output,
            a=ns.a,
            b=ns.b,
            repeats=ns.repeats,
            clamp_kappa=ns.clamp_kappa,
            threads=threads_from_env(),
        ).validate()
        if not ns.b > ns.a:
            raise ValueError(f"need a < b, got a={ns.a}, b={ns.b}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, ns.audit


def _num(x):
    return "" if x is None else f"{x:.17g}"


def emit_table(rows: list[StudyRow], fmt: str = "csv") -> str:
    if not rows:
        raise ValueError("no rows to emit")
    if fmt == "csv":
        out = io.StringIO()
        out.write(CSV_COLUMNS + "\n")
        for r in rows:
            out.write(
                ",".join(
                    [
                        _num(r.alpha),
                        _num(r.kappa),
                        str(r.N),
                        r.scheme,
                        r.solver,
                        _num(r.error_inf),
                        _num(r.order),
                        "" if r.iterations is None else str(r.iterations),
                        _num(r.wall_time),
                    ]
                )
                + "\n"
            )
        return out.getvalue()
    if fmt == "markdown":
        return _markdown(rows)
    raise ValueError(f"unknown format {fmt!r}")


def _markdown(rows):
    lines = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.alpha, r.scheme, r.solver), []).append(r)
    for (alpha, scheme, solver), grp in groups.items():
        lines.append(f"alpha = {alpha:g}, scheme = {scheme}, solver = {solver}")
        lines.append("")
        lines.append("| kappa | N | error_inf | Cov. | Iter. | time (s) |")
        lines.append("|---|---|---|---|---|---|")
        for r in grp:
            cov = "---" if r.order is None else f"{r.order:.4f}"
            it = "" if r.iterations is None else str(r.iterations)
            flag = "" if r.converged else " (not converged)"
            lines.append(
                f"| {r.kappa:.4g} | {r.N} | {r.error_inf:.4e}{flag} | {cov} | {it} | {r.wall_time:.3g} |"
            )
        lines.append("")
    return "\n".join(lines)


def _run_audit(cfg: StudyConfig, out) -> int:
    alpha = cfg.alphas[0]
    kappa = resolve_kappa(cfg.kappas[0], alpha, cfg.clamp_kappa)
    N = int(cfg.N_list[0])
    if N > AUDIT_CAP:
        raise ConfigError(f"audit needs N <= {AUDIT_CAP}, got {N}")
    scheme = ORIGINAL if cfg.scheme == "direct" else cfg.scheme
    mesh = build_graded_mesh(cfg.a, cfg.b, N, kappa)
    op = build_operator(mesh, alpha, scheme, cfg.eps_soe)
    rep = audit_solvability(materialize_fast_matrix(op, scaled=False), mesh, alpha, cfg.eps_soe)
    out.write(f"audit alpha={alpha:g} kappa={kappa:g} N={N} scheme={scheme} Ne={op.soe.Ne}\n")
    for line in rep.lines():
        out.write(line + "\n")
    if op.unsupported_theory:
        out.write("note: unsupported-theory (original scheme with alpha >= 1 has no solvability guarantee)\n")
    return EXIT_OK


def run_main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg, audit = parse_config(argv)
        if audit:
            return _run_audit(cfg, out)
        rows = run_convergence_study(cfg)
    except ConfigError as exc:
        err.write(f"fraclap: invalid input: {exc}\n")
        return EXIT_INVALID
    except MeshError as exc:
        err.write(f"fraclap: invalid mesh: {exc}\n")
        return EXIT_INVALID
    except SoeBuildError as exc:
        err.write(f"fraclap: SOE construction failed: {exc}\n")
        return EXIT_SOE
    except (SingularMatrixError, PreconditionerError, np.linalg.LinAlgError) as exc:
        err.write(f"fraclap: solver failure: {exc}\n")
        return EXIT_SOLVER
    out.write(emit_table(rows, cfg.output))
    failed = [r for r in rows if not r.converged]
    if failed:
        for r in failed:
            err.write(f"fraclap: no convergence for alpha={r.alpha:g} kappa={r.kappa:g} N={r.N} ({r.note})\n")
        return EXIT_SOLVER
    return EXIT_OK


def main():
    sys.exit(run_main())
