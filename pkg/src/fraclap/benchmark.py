"""Exact-solution benchmark, error metrics and convergence studies."""

from __future__ import annotations

import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mesh import GradedMesh, build_graded_mesh
from .operators import (
    MODIFIED,
    ORIGINAL,
    build_operator,
    exact_matrix,
    normalization_constant,
    regime_of,
)
from .soe import SoeApproximation, build_soe
from .solver import bicgstab, build_banded_preconditioner, dense_gaussian_elimination

__all__ = [
    "DIRECT",
    "SCHEMES",
    "SOLVERS",
    "KAPPA_TOKENS",
    "StudyConfig",
    "StudyRow",
    "convergence_order",
    "exact_nodal_values",
    "exact_solution",
    "expected_order",
    "max_norm_error",
    "resolve_kappa",
    "run_convergence_study",
    "threads_from_env",
]

DIRECT = "direct"
SCHEMES = (ORIGINAL, MODIFIED, DIRECT)
GE, BICGSTAB, F_BICGSTAB, PF_BICGSTAB = "ge", "bicgstab", "f-bicgstab", "pf-bicgstab"
SOLVERS = (GE, BICGSTAB, F_BICGSTAB, PF_BICGSTAB)
DENSE_LIMIT = 1 << 13

# grading exponents named after the rows of the convergence tables, with
# sigma = alpha / 2
KAPPA_TOKENS = {
    "uniform": lambda a: 1.0,
    "k2/(1+s)": lambda a: 2.0 / (1.0 + 0.5 * a),
    "k(2-a)/2s": lambda a: (2.0 - a) / a,
    "k(2-a)/s": lambda a: 2.0 * (2.0 - a) / a,
}


def resolve_kappa(token, alpha: float, clamp: bool = False) -> float:
    """Numeric grading exponent for a token or number; ``clamp`` lifts values below 1 to 1."""
    if isinstance(token, str):
        key = token.strip().replace("−", "-")
        if key in KAPPA_TOKENS:
            kappa = KAPPA_TOKENS[key](alpha)
        else:
            try:
                kappa = float(key)
            except ValueError:
                raise ValueError(
                    f"unknown kappa {token!r}; use a number or one of {sorted(KAPPA_TOKENS)}"
                ) from None
    else:
        kappa = float(token)
    if clamp:
        kappa = max(1.0, kappa)
    if not math.isfinite(kappa) or kappa < 1.0:
        raise ValueError(f"kappa must be >= 1, got {kappa} (from {token!r}, alpha={alpha})")
    return kappa


def _getoor_constant(alpha: float) -> float:
    return (
        2.0**-alpha
        * math.sqrt(math.pi)
        / (math.gamma(0.5 * (1.0 + alpha)) * math.gamma(1.0 + 0.5 * alpha))
    )


def exact_solution(alpha: float, x, a: float = 0.0, b: float = 2.0):
    """Solution of the fractional Poisson problem with f = 1 on (a, b).

    ``c_alpha [(x - a)(b - x)]**(alpha/2)`` inside, 0 outside.  On (0, 2)
    this is ``c_alpha [x (2 - x)]**(alpha/2)``.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha!r}")
    x = np.asarray(x, dtype=float)
    prod = np.clip((x - a) * (b - x), 0.0, None)
    out = _getoor_constant(alpha) * prod ** (0.5 * alpha)
    return float(out) if out.ndim == 0 else out


def exact_nodal_values(mesh: GradedMesh, alpha: float) -> np.ndarray:
    """Exact solution at the interior nodes, using boundary distances that
    stay accurate where nodes round onto an endpoint."""
    to_a, to_b = mesh.boundary_distances()
    prod = (to_a * to_b)[1:-1]
    return _getoor_constant(alpha) * prod ** (0.5 * alpha)


def max_norm_error(U, mesh: GradedMesh, alpha: float) -> float:
    U = np.asarray(U, dtype=float)
    if U.shape != (mesh.N - 1,):
        raise ValueError(f"expected {mesh.N - 1} nodal values, got shape {U.shape}")
    return float(np.max(np.abs(exact_nodal_values(mesh, alpha) - U)))


def convergence_order(e_coarse: float, e_fine: float) -> float:
    if not (e_coarse > 0.0 and e_fine > 0.0):
        raise ValueError("errors must be positive")
    return math.log2(e_coarse / e_fine)


def expected_order(alpha: float, kappa: float) -> float:
    """min{2 - alpha, kappa sigma} with sigma = alpha / 2."""
    return min(2.0 - alpha, kappa * 0.5 * alpha)


@dataclass(frozen=True)
class StudyConfig:
    alphas: tuple
    kappas: tuple = ("uniform",)
    N_list: tuple = (64, 128, 256, 512)
    scheme: str = ORIGINAL
    solver: str = PF_BICGSTAB
    eps_soe: float = 1e-8
    tol: float = 1e-8
    max_iter: int | None = None
    band_l: int = 2
    output: str = "csv"
    a: float = 0.0
    b: float = 2.0
    repeats: int = 1
    clamp_kappa: bool = False
    threads: int = 1

    def validate(self) -> "StudyConfig":
        if not self.alphas:
            raise ValueError("at least one alpha is required")
        for al in self.alphas:
            regime_of(al)
        if not self.N_list:
            raise ValueError("at least one N is required")
        for N in self.N_list:
            if int(N) != N or N % 2:
                raise ValueError(f"N must be even, got {N}")
            if N < 4:
                raise ValueError(f"N must be at least 4, got {N}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.scheme == DIRECT and self.solver in (F_BICGSTAB, PF_BICGSTAB):
            raise ValueError("the fast solvers need scheme 'original' or 'modified'")
        if self.solver in (GE, BICGSTAB) and max(self.N_list) > DENSE_LIMIT:
            raise ValueError(f"dense solvers are limited to N <= {DENSE_LIMIT}")
        if not self.eps_soe > 0 or not self.tol > 0:
            raise ValueError("eps and tol must be positive")
        if self.band_l < 1:
            raise ValueError("band_l must be >= 1")
        if self.repeats < 1 or self.threads < 1:
            raise ValueError("repeats and threads must be >= 1")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for al in self.alphas:
            for k in self.kappas:
                resolve_kappa(k, al, self.clamp_kappa)
        return self


@dataclass
class StudyRow:
    alpha: float
    kappa: float
    N: int
    scheme: str
    solver: str
    error_inf: float
    order: float | None = None
    iterations: int | None = None
    wall_time: float = 0.0
    converged: bool = True
    note: str = field(default="", compare=False)

    @property
    def key(self):
        return (self.alpha, self.kappa, self.scheme, self.solver)


class _SoeCache:
    def __init__(self):
        self._store: dict = {}

    def get(self, beta, eps, delta_x, X) -> SoeApproximation:
        key = (beta, eps, delta_x, X)
        if key not in self._store:
            self._store[key] = build_soe(beta, eps, delta_x, X)
        return self._store[key]


def _solve_once(cfg: StudyConfig, mesh: GradedMesh, alpha: float, soe_cache: _SoeCache):
    n = mesh.N - 1
    f = np.ones(n)
    scheme = ORIGINAL if cfg.scheme == DIRECT else cfg.scheme
    max_iter = cfg.max_iter
    if cfg.solver in (GE, BICGSTAB):
        t0 = time.perf_counter()
        A = exact_matrix(mesh, alpha, scheme) * normalization_constant(alpha)
        if cfg.solver == GE:
            U = dense_gaussian_elimination(A, f)
            return U, None, True, time.perf_counter() - t0, ""
        rep = bicgstab(A, f, tol=cfg.tol, max_iter=max_iter)
        return rep.solution, rep.iterations, rep.converged, time.perf_counter() - t0, rep.breakdown or ""

    beta = 1.0 + alpha if regime_of(alpha) == "sub" else alpha
    soe = soe_cache.get(beta, cfg.eps_soe, mesh.h_min, mesh.length)
    t0 = time.perf_counter()
    op = build_operator(mesh, alpha, scheme, cfg.eps_soe, soe=soe)
    P = None
    if cfg.solver == PF_BICGSTAB:
        P = build_banded_preconditioner(mesh, alpha, scheme, min(cfg.band_l, (n + 1) // 2))
    rep = bicgstab(op, f, tol=cfg.tol, max_iter=max_iter, precond=P)
    return rep.solution, rep.iterations, rep.converged, time.perf_counter() - t0, rep.breakdown or ""


def _run_row(cfg, alpha, kappa, N, soe_cache):
    mesh = build_graded_mesh(cfg.a, cfg.b, N, kappa)
    times = []
    for _ in range(cfg.repeats):
        U, iters, conv, wall, note = _solve_once(cfg, mesh, alpha, soe_cache)
        times.append(wall)
    err = max_norm_error(U, mesh, alpha)
    return StudyRow(
        alpha=float(alpha),
        kappa=float(kappa),
        N=int(N),
        scheme=cfg.scheme,
        solver=cfg.solver,
        error_inf=err,
        iterations=iters,
        wall_time=statistics.median(times),
        converged=bool(conv),
        note=note if conv else (note or "max_iter"),
    )


def run_convergence_study(config: StudyConfig) -> list[StudyRow]:
    """Solve every (alpha, kappa, N) of the grid and attach convergence orders.

    Rows come out ordered by alpha, then kappa (as listed), then N.  A
    solver that stops without converging yields a row with
    ``converged=False`` rather than an exception.
    """
    cfg = config.validate()
    soe_cache = _SoeCache()
    jobs = []
    for al in cfg.alphas:
        for tok in cfg.kappas:
            kappa = resolve_kappa(tok, al, cfg.clamp_kappa)
            for N in sorted(set(int(n) for n in cfg.N_list)):
                jobs.append((al, kappa, N))
    if cfg.threads > 1:
        # one cache per job keeps worker threads independent
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(lambda j: _run_row(cfg, *j, _SoeCache()), jobs))
    else:
        rows = [_run_row(cfg, *j, soe_cache) for j in jobs]
    _attach_orders(rows)
    return rows


def _attach_orders(rows):
    index = {(r.key, r.N): r for r in rows}
    for r in rows:
        coarse = index.get((r.key, r.N // 2)) if r.N % 4 == 0 else None
        if coarse is not None and coarse.error_inf > 0 and r.error_inf > 0:
            r.order = convergence_order(coarse.error_inf, r.error_inf)


def threads_from_env(default: int = 1) -> int:
    raw = os.environ.get("FRACLAP_THREADS")
    if raw is None or raw.strip() == "":
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"FRACLAP_THREADS must be >= 1, got {raw!r}")
    return n

