"""Krylov solver, banded preconditioner and a dense direct solver."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
import scipy.linalg

from .mesh import GradedMesh
from .operators import exact_entries, normalization_constant

__all__ = [
    "BandedPreconditioner",
    "PreconditionerError",
    "SingularMatrixError",
    "SolveReport",
    "banded_solve",
    "bicgstab",
    "build_banded_preconditioner",
    "dense_gaussian_elimination",
    "factor_band",
]

RHO_ZERO = "rho_zero"
OMEGA_ZERO = "omega_zero"


class PreconditionerError(ValueError):
    """The band is not strictly diagonally dominant or hit a zero pivot."""


class SingularMatrixError(np.linalg.LinAlgError):
    pass


# --------------------------------------------------------------------------
# banded LU without pivoting.  Row i of ``B`` holds A[i, i-p .. i+p] with
# A[i, j] stored at B[i, j - i + p].


@numba.njit(cache=True, nogil=True)
def _band_lu(B, p):
    n = B.shape[0]
    for k in range(n):
        piv = B[k, p]
        if piv == 0.0:
            return k
        for i in range(k + 1, min(n, k + p + 1)):
            f = B[i, k - i + p] / piv
            B[i, k - i + p] = f
            for j in range(k + 1, min(n, k + p + 1)):
                B[i, j - i + p] -= f * B[k, j - k + p]
    return -1


@numba.njit(cache=True, nogil=True)
def _band_solve(B, p, r, z):
    n = B.shape[0]
    for i in range(n):
        acc = r[i]
        for j in range(max(0, i - p), i):
            acc -= B[i, j - i + p] * z[j]
        z[i] = acc
    for i in range(n - 1, -1, -1):
        acc = z[i]
        for j in range(i + 1, min(n, i + p + 1)):
            acc -= B[i, j - i + p] * z[j]
        z[i] = acc / B[i, p]


@dataclass(frozen=True, eq=False)
class BandedPreconditioner:
    """Band of half-width ``l - 1`` (``2l - 1`` diagonals) with its LU factors.

    ``band`` keeps the original entries (row-aligned storage, see
    :func:`band_from_dense`), ``factors`` the in-place unit-lower/upper LU.
    """

    l: int
    band: np.ndarray = field(repr=False)
    factors: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.band.shape[0]

    @property
    def half_width(self) -> int:
        return self.l - 1

    def matvec(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        p = self.half_width
        n = self.size
        out = self.band[:, p] * z
        for d in range(1, p + 1):
            out[:-d] += self.band[:-d, p + d] * z[d:]
            out[d:] += self.band[d:, p - d] * z[:-d]
        return out

    def solve(self, r) -> np.ndarray:
        return banded_solve(self, r)

    def to_dense(self) -> np.ndarray:
        n = self.size
        p = self.half_width
        A = np.zeros((n, n))
        for d in range(-p, p + 1):
            i = np.arange(max(0, -d), min(n, n - d))
            A[i, i + d] = self.band[i, d + p]
        return A


def band_from_dense(A, l: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    p = l - 1
    B = np.zeros((n, 2 * p + 1))
    for d in range(-p, p + 1):
        i = np.arange(max(0, -d), min(n, n - d))
        B[i, d + p] = A[i, i + d]
    return B


def factor_band(band: np.ndarray, l: int) -> BandedPreconditioner:
    """Check strict diagonal dominance of the band and factor it without pivoting."""
    band = np.array(band, dtype=float)
    if l < 1 or band.ndim != 2 or band.shape[1] != 2 * l - 1:
        raise ValueError(f"band storage of shape {band.shape} does not match l={l}")
    p = l - 1
    diag = band[:, p]
    off = np.abs(band).sum(axis=1) - np.abs(diag)
    gap = np.abs(diag) - off
    if not np.all(gap > 0):
        row = int(np.argmin(gap))
        raise PreconditionerError(
            f"band is not strictly diagonally dominant (row {row + 1}: "
            f"|a_ii| - sum|a_ij| = {gap[row]:.3e}); refusing pivot-free LU"
        )
    factors = band.copy()
    bad = _band_lu(factors, p)
    if bad >= 0:
        raise PreconditionerError(f"zero pivot in row {bad + 1}")
    band.setflags(write=False)
    factors.setflags(write=False)
    return BandedPreconditioner(l=l, band=band, factors=factors)


def build_banded_preconditioner(
    mesh: GradedMesh, alpha: float, scheme: str = "original", l: int = 2
) -> BandedPreconditioner:
    """Band of the exact (non-SOE) collocation matrix of ``scheme``, times C_alpha.

    Only the ``2l - 1`` central diagonals are formed, so the cost is O(N l).
    """
    n = mesh.N - 1
    if l < 1:
        raise ValueError(f"l must be >= 1, got {l}")
    if 2 * l - 1 > n:
        raise ValueError(f"bandwidth 2l-1={2 * l - 1} exceeds the system size {n}")
    p = l - 1
    rows = np.arange(1, n + 1)[:, None]
    cols = rows + np.arange(-p, p + 1)[None, :]
    band = exact_entries(mesh, alpha, scheme, rows, cols)
    band *= normalization_constant(alpha)
    return factor_band(band, l)


def banded_solve(P: BandedPreconditioner, r) -> np.ndarray:
    r = np.ascontiguousarray(r, dtype=float)
    if r.shape != (P.size,):
        raise ValueError(f"expected a vector of length {P.size}, got shape {r.shape}")
    z = np.empty_like(r)
    _band_solve(P.factors, P.half_width, r, z)
    return z


# --------------------------------------------------------------------------


@dataclass
class SolveReport:
    solution: np.ndarray = field(repr=False)
    iterations: int
    relative_residual: float
    converged: bool
    breakdown: str | None = None
    wall_time: float = 0.0


def _as_map(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A):
        return A
    M = np.asarray(A, dtype=float)
    return lambda v: M @ v


def bicgstab(
    apply_A,
    f,
    x0=None,
    tol: float = 1e-8,
    max_iter: int | None = None,
    precond: BandedPreconditioner | None = None,
) -> SolveReport:
    """BiCGSTAB with shadow residual ``r~ = r0`` and optional right preconditioning.

    Convergence is declared on the Euclidean relative residual
    ``||f - A x|| / ||f||``.  When the recursively updated residual drops
    below ``tol`` the true residual is recomputed; if it is still above
    ``tol`` the iteration continues from the true residual.  Breakdowns
    (``rho = 0`` or ``omega = 0``) stop the iteration and are reported.
    """
    t0 = time.perf_counter()
    A = _as_map(apply_A)
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * (n + 1)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    M = (lambda v: v) if precond is None else precond.solve

    fnorm = float(np.linalg.norm(f))
    if fnorm == 0.0:
        x = np.zeros(n)
        return SolveReport(x, 0, 0.0, True, None, time.perf_counter() - t0)

    def report(it, res, conv, brk=None):
        return SolveReport(x, it, res, conv, brk, time.perf_counter() - t0)

    r = f - A(x) if np.any(x) else f.copy()
    res = float(np.linalg.norm(r)) / fnorm
    if res <= tol:
        return report(0, res, True)
    r_shadow = r.copy()
    rho_prev = alpha = omega = 1.0
    p = np.zeros(n)
    mu = np.zeros(n)

    for it in range(1, max_iter + 1):
        rho = float(r_shadow @ r)
        if rho == 0.0:
            return report(it - 1, res, False, RHO_ZERO)
        if it == 1:
            p = r.copy()
        else:
            beta = (rho / rho_prev) * (alpha / omega)
            p = r + beta * (p - omega * mu)
        p_hat = M(p)
        mu = A(p_hat)
        denom = float(r_shadow @ mu)
        if denom == 0.0:
            return report(it - 1, res, False, RHO_ZERO)
        alpha = rho / denom
        s = r - alpha * mu
        if float(np.linalg.norm(s)) / fnorm <= tol:
            x = x + alpha * p_hat
            true = float(np.linalg.norm(f - A(x))) / fnorm
            if true <= tol:
                return report(it, true, True)
            r = f - A(x)
            res = true
            rho_prev = rho
            omega = 1.0
            r_shadow = r.copy()
            p = np.zeros(n)
            mu = np.zeros(n)
            continue
        s_hat = M(s)
        t = A(s_hat)
        tt = float(t @ t)
        omega = float(t @ s) / tt if tt > 0.0 else 0.0
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        res = float(np.linalg.norm(r)) / fnorm
        if res <= tol:
            true = float(np.linalg.norm(f - A(x))) / fnorm
            if true <= tol:
                return report(it, true, True)
            r = f - A(x)
            res = true
        if omega == 0.0:
            return report(it, res, False, OMEGA_ZERO)
        rho_prev = rho
    return report(max_iter, res, False)


def dense_gaussian_elimination(A, f) -> np.ndarray:
    """Partial-pivoted LU solve of a dense system."""
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    with warnings.catch_warnings():
        # singularity is reported below as SingularMatrixError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() == 0.0 or d.min() <= np.finfo(float).eps * d.max() * A.shape[0]:
        raise SingularMatrixError("matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), f)
