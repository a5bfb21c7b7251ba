"""Fast collocation operators for the integral fractional Laplacian.

Unknowns are nodal values ``v_1..v_{N-1}`` of a piecewise-linear function
vanishing outside ``(a, b)``.  The operator at node ``x_i`` splits into a
left tail ``(-inf, x_{i-1}]``, a local part ``[x_{i-1}, x_{i+1}]`` and a right
tail ``[x_{i+1}, inf)``.  The tails are evaluated through an SOE kernel
approximation and first-order recurrences over the nodes; everything else is
a three-point stencil.

Three regimes are distinguished by the fractional order:

* ``sub``   (alpha < 1): kernel ``|x - y|**-(1 + alpha)`` applied to the hat
  interpolant directly.
* ``one``   (alpha == 1) and ``super`` (1 < alpha < 2): one integration by
  parts moves the derivative onto the interpolant, leaving the kernel
  ``|x - y|**-alpha``.

Internally every per-node array has length N + 1 and is indexed by the
1-based node number; ``h[k]`` is the width of cell ``[x_{k-1}, x_k]`` with
``h[0]`` unused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .mesh import GradedMesh
from .soe import SoeApproximation, build_soe

__all__ = [
    "ORIGINAL",
    "MODIFIED",
    "AuditReport",
    "CoefficientTables",
    "DirectMatrix",
    "FastOperator",
    "apply_fast",
    "assemble_direct_matrix",
    "audit_solvability",
    "build_operator",
    "exact_entries",
    "exact_matrix",
    "g_alpha",
    "local_part_modified",
    "local_part_original",
    "materialize_fast_matrix",
    "normalization_constant",
    "precompute_coefficients",
    "regime_of",
    "sweep_left",
    "sweep_right",
    "xi_row_sums",
]

ORIGINAL = "original"
MODIFIED = "modified"
SCHEMES = (ORIGINAL, MODIFIED)
SUB, ONE, SUPER = "sub", "one", "super"
ALPHA_ONE_TOL = 1e-12
# coefficient tables are kept when N * Ne stays below this; otherwise the
# sweeps recompute them on the fly
TABLE_BUDGET = 1 << 23
AUDIT_CAP = 4096


def regime_of(alpha: float) -> str:
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha!r}")
    if abs(alpha - 1.0) < ALPHA_ONE_TOL:
        return ONE
    return SUB if alpha < 1.0 else SUPER


def normalization_constant(alpha: float) -> float:
    """C_alpha = alpha 2**(alpha-1) Gamma((1+alpha)/2) / (sqrt(pi) Gamma(1-alpha/2))."""
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha!r}")
    return (
        alpha
        * 2.0 ** (alpha - 1.0)
        * math.gamma(0.5 * (1.0 + alpha))
        / (math.sqrt(math.pi) * math.gamma(1.0 - 0.5 * alpha))
    )


# --------------------------------------------------------------------------
# cancellation-safe scalar kernels

_SERIES_CUT = 0.5
_N_SERIES = 18


@numba.njit(cache=True, nogil=True)
def _phi1(z):
    # (1 - e^{-z}) / z
    if z == 0.0:
        return 1.0
    return -math.expm1(-z) / z


@numba.njit(cache=True, nogil=True)
def _phi2_e(z, e):
    # (e^{-z} + z - 1) / z**2 with e = e^{-z}
    if z < _SERIES_CUT:
        acc = 0.0
        term = 0.5
        for k in range(_N_SERIES):
            acc += term
            term *= -z / (k + 3)
        return acc
    return (e + z - 1.0) / (z * z)


@numba.njit(cache=True, nogil=True)
def _psi_e(z, e):
    # (1 - e^{-z} (1 + z)) / z**2 = sum_m (-1)^m (m+1) z^m / (m+2)!
    if z < _SERIES_CUT:
        acc = 0.0
        fact = 0.5  # 1 / (m+2)!
        zm = 1.0
        for m in range(_N_SERIES):
            acc += (m + 1) * zm * fact
            zm *= -z
            fact /= m + 3
        return acc
    return (1.0 - e * (1.0 + z)) / (z * z)


_phi1_v = np.vectorize(lambda z: _phi1(z), otypes=[float])


def phi1(z):
    return _phi1_v(np.asarray(z, dtype=float))


def phi2(z):
    z = np.asarray(z, dtype=float)
    return np.vectorize(lambda t: _phi2_e(t, math.exp(-t)), otypes=[float])(z)


def psi(z):
    z = np.asarray(z, dtype=float)
    return np.vectorize(lambda t: _psi_e(t, math.exp(-t)), otypes=[float])(z)


# --------------------------------------------------------------------------
# coefficient tables


@numba.njit(cache=True, nogil=True)
def _cell_tables_sub(h, lam, E, P, Q):
    Ne = lam.shape[0]
    N = h.shape[0] - 1
    for s in range(Ne):
        for k in range(1, N + 1):
            z = lam[s] * h[k]
            e = math.exp(-z)
            E[s, k] = e
            P[s, k] = h[k] * _phi2_e(z, e)
            Q[s, k] = h[k] * _psi_e(z, e)


@numba.njit(cache=True, nogil=True)
def _cell_tables_tilde(h, lam, E, F):
    Ne = lam.shape[0]
    N = h.shape[0] - 1
    for s in range(Ne):
        for k in range(1, N + 1):
            z = lam[s] * h[k]
            E[s, k] = math.exp(-z)
            F[s, k] = _phi1(z)


@dataclass(frozen=True)
class CoefficientTables:
    """Recurrence coefficients of the SOE sweeps.

    Stored per cell and per exponential channel (shape ``(Ne, N + 1)``, cell
    ``k`` in column ``k``): ``omega = exp(-lam h_k)`` and, for the ``sub``
    regime, ``cell_p = h_k phi2(lam h_k)`` and ``cell_q = h_k psi(lam h_k)``;
    for ``one``/``super`` ``cell_f = phi1(lam h_k)``.  The node-indexed
    weights of the recurrences are products of these and are exposed as
    properties.
    """

    regime: str
    omega: np.ndarray = field(repr=False)
    cell_p: np.ndarray | None = field(default=None, repr=False)
    cell_q: np.ndarray | None = field(default=None, repr=False)
    cell_f: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.omega.shape[1] - 1

    def _node_table(self, cells, shift_w, shift_c, lo, hi):
        out = np.zeros_like(self.omega)
        i = np.arange(lo, hi + 1)
        if len(i):
            out[:, i] = self.omega[:, i + shift_w] * cells[:, i + shift_c]
        return out

    @property
    def muL(self):
        """mu^L_i = omega_i h_{i-1} phi2 (sub) or omega_i phi1(lam h_{i-1})."""
        cells = self.cell_p if self.regime == SUB else self.cell_f
        return self._node_table(cells, 0, -1, 2, self.N - 1)

    @property
    def nuL(self):
        if self.regime != SUB:
            return None
        return self._node_table(self.cell_q, 0, -1, 2, self.N - 1)

    @property
    def muR(self):
        cells = self.cell_p if self.regime == SUB else self.cell_f
        return self._node_table(cells, 1, 2, 1, self.N - 2)

    @property
    def nuR(self):
        if self.regime != SUB:
            return None
        return self._node_table(self.cell_q, 1, 2, 1, self.N - 2)


def _padded_steps(mesh: GradedMesh) -> np.ndarray:
    h = np.empty(mesh.N + 1)
    h[0] = np.nan
    h[1:] = mesh.steps
    return h


def _check_soe_window(mesh: GradedMesh, soe: SoeApproximation):
    if soe.delta_x > mesh.h_min or soe.X < mesh.length:
        raise ValueError(
            f"SOE window [{soe.delta_x:g}, {soe.X:g}] does not cover the kernel "
            f"arguments [{mesh.h_min:g}, {mesh.length:g}]"
        )


def precompute_coefficients(
    mesh: GradedMesh, soe: SoeApproximation, alpha: float
) -> CoefficientTables:
    regime = regime_of(alpha)
    expected_beta = 1.0 + alpha if regime == SUB else alpha
    if abs(soe.beta - expected_beta) > 1e-12:
        raise ValueError(f"SOE built for beta={soe.beta}, regime {regime} needs {expected_beta}")
    _check_soe_window(mesh, soe)
    h = _padded_steps(mesh)
    shape = (soe.Ne, mesh.N + 1)
    E = np.zeros(shape)
    if regime == SUB:
        P = np.zeros(shape)
        Q = np.zeros(shape)
        _cell_tables_sub(h, soe.exponents, E, P, Q)
        return CoefficientTables(regime, E, cell_p=P, cell_q=Q)
    F = np.zeros(shape)
    _cell_tables_tilde(h, soe.exponents, E, F)
    return CoefficientTables(regime, E, cell_f=F)


# --------------------------------------------------------------------------
# sweep kernels.  u has length N + 1 with u[0] = u[N] = 0.  The "acc"
# variants add sum_s theta_s (S^L + S^R) into out; the "store" variants keep
# the per-channel values for inspection.


@numba.njit(cache=True, nogil=True)
def _acc_sub_tab(u, E, P, Q, theta, out):
    Ne, N1 = E.shape
    N = N1 - 1
    for s in range(Ne):
        th = theta[s]
        S = 0.0
        for i in range(2, N):
            S = E[s, i] * (S + P[s, i - 1] * u[i - 1] + Q[s, i - 1] * u[i - 2])
            out[i] += th * S
        S = 0.0
        for i in range(N - 2, 0, -1):
            S = E[s, i + 1] * (S + P[s, i + 2] * u[i + 1] + Q[s, i + 2] * u[i + 2])
            out[i] += th * S


@numba.njit(cache=True, nogil=True)
def _acc_tilde_tab(u, E, F, theta, out):
    Ne, N1 = E.shape
    N = N1 - 1
    for s in range(Ne):
        th = theta[s]
        S = 0.0
        for i in range(2, N):
            S = E[s, i] * (S + F[s, i - 1] * (u[i - 1] - u[i - 2]))
            out[i] += th * S
        S = 0.0
        for i in range(N - 2, 0, -1):
            S = E[s, i + 1] * (S + F[s, i + 2] * (u[i + 1] - u[i + 2]))
            out[i] += th * S


# The streamed variants run node-outer, channel-inner so that u and out are
# read once per sweep; the per-channel state stays in a few short arrays.
# Channels are summed in ascending order, so results are bit-stable.


@numba.njit(cache=True, nogil=True)
def _acc_sub_stream(u, h, lam, theta, out):
    N = h.shape[0] - 1
    Ne = lam.shape[0]
    S = np.zeros(Ne)
    p = np.empty(Ne)
    q = np.empty(Ne)
    # left sweep; p, q hold the weights of cell i - 1
    for s in range(Ne):
        z = lam[s] * h[1]
        e = math.exp(-z)
        p[s] = h[1] * _phi2_e(z, e)
        q[s] = h[1] * _psi_e(z, e)
    for i in range(2, N):
        ul = u[i - 1]
        ull = u[i - 2]
        hi = h[i]
        acc = 0.0
        for s in range(Ne):
            z = lam[s] * hi
            e = math.exp(-z)
            S[s] = e * (S[s] + p[s] * ul + q[s] * ull)
            acc += theta[s] * S[s]
            p[s] = hi * _phi2_e(z, e)
            q[s] = hi * _psi_e(z, e)
        out[i] += acc
    # right sweep; p, q hold the weights of cell i + 2
    for s in range(Ne):
        S[s] = 0.0
        z = lam[s] * h[N]
        e = math.exp(-z)
        p[s] = h[N] * _phi2_e(z, e)
        q[s] = h[N] * _psi_e(z, e)
    for i in range(N - 2, 0, -1):
        ur = u[i + 1]
        urr = u[i + 2]
        hi = h[i + 1]
        acc = 0.0
        for s in range(Ne):
            z = lam[s] * hi
            e = math.exp(-z)
            S[s] = e * (S[s] + p[s] * ur + q[s] * urr)
            acc += theta[s] * S[s]
            p[s] = hi * _phi2_e(z, e)
            q[s] = hi * _psi_e(z, e)
        out[i] += acc


@numba.njit(cache=True, nogil=True)
def _acc_tilde_stream(u, h, lam, theta, out):
    N = h.shape[0] - 1
    Ne = lam.shape[0]
    S = np.zeros(Ne)
    f = np.empty(Ne)
    for s in range(Ne):
        f[s] = _phi1(lam[s] * h[1])
    for i in range(2, N):
        du = u[i - 1] - u[i - 2]
        hi = h[i]
        acc = 0.0
        for s in range(Ne):
            z = lam[s] * hi
            S[s] = math.exp(-z) * (S[s] + f[s] * du)
            acc += theta[s] * S[s]
            f[s] = _phi1(z)
        out[i] += acc
    for s in range(Ne):
        S[s] = 0.0
        f[s] = _phi1(lam[s] * h[N])
    for i in range(N - 2, 0, -1):
        du = u[i + 1] - u[i + 2]
        hi = h[i + 1]
        acc = 0.0
        for s in range(Ne):
            z = lam[s] * hi
            S[s] = math.exp(-z) * (S[s] + f[s] * du)
            acc += theta[s] * S[s]
            f[s] = _phi1(z)
        out[i] += acc


# --------------------------------------------------------------------------
# the operator


@dataclass(frozen=True, eq=False)
class FastOperator:
    """Matrix-free collocation operator ``v -> L_h v`` (C_alpha included).

    ``lower``, ``diag`` and ``upper`` hold every non-SOE term of the scheme
    as a three-point stencil (without C_alpha); the SOE tails are added by
    the sweeps.  ``coeffs`` is ``None`` when the tables would exceed
    ``TABLE_BUDGET`` entries, in which case the sweeps stream them.
    """

    mesh: GradedMesh
    alpha: float
    scheme: str
    C_alpha: float
    soe: SoeApproximation
    coeffs: CoefficientTables | None
    eta: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    diag: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    @property
    def regime(self) -> str:
        return regime_of(self.alpha)

    @property
    def N(self) -> int:
        return self.mesh.N

    @property
    def size(self) -> int:
        return self.mesh.N - 1

    @property
    def unsupported_theory(self) -> bool:
        """Original scheme with alpha >= 1: no solvability guarantee."""
        return self.scheme == ORIGINAL and self.regime != SUB

    @property
    def shape(self):
        return (self.size, self.size)

    def __call__(self, v):
        return apply_fast(self, v)

    def matvec(self, v):
        return apply_fast(self, v)


def _eta(h: np.ndarray, alpha: float) -> np.ndarray:
    """eta_i for interior nodes, returned with node indexing (length N+1)."""
    N = len(h) - 1
    eta = np.zeros(N + 1)
    hl = h[1:N]
    hr = h[2:N + 1]
    if regime_of(alpha) == ONE:
        val = np.log(hl) - np.log(hr)
    else:
        p = 1.0 - alpha
        val = (hl**p - hr**p) / p
    eta[1:N] = np.where(hl == hr, 0.0, val)
    return eta


def _stencil(h: np.ndarray, alpha: float, scheme: str, eta: np.ndarray):
    """(lower, diag, upper) with node indexing; entries 1..N-1 are used."""
    N = len(h) - 1
    regime = regime_of(alpha)
    hl = h[1:N]
    hr = h[2:N + 1]
    lower = np.zeros(N + 1)
    diag = np.zeros(N + 1)
    upper = np.zeros(N + 1)
    if scheme == ORIGINAL:
        if regime == ONE:
            cl = (1.0 + np.log(hl)) / hl
            cr = (1.0 + np.log(hr)) / hr
            lo, di, up = -cl, cl + cr, -cr
        else:
            pl = hl**-alpha
            pr = hr**-alpha
            di = (pl + pr) / (alpha * (1.0 - alpha))
            scale = 1.0 - alpha if regime == SUB else alpha * (1.0 - alpha)
            lo, up = -pl / scale, -pr / scale
    elif scheme == MODIFIED:
        e = eta[1:N]
        pl = hl**-alpha
        pr = hr**-alpha
        d2l = -hr / (hl * (hl + hr))
        d2c = (hr - hl) / (hl * hr)
        d2r = hl / (hr * (hl + hr))
        lo = d2l * e
        di = (pl + pr) / alpha + d2c * e
        up = d2r * e
        if regime != SUB:
            lo = lo - pl / alpha
            up = up - pr / alpha
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    lower[1:N] = lo
    diag[1:N] = di
    upper[1:N] = up
    return lower, diag, upper


def build_operator(
    mesh: GradedMesh,
    alpha: float,
    scheme: str = ORIGINAL,
    eps: float = 1e-8,
    soe: SoeApproximation | None = None,
    tabulate: bool | None = None,
) -> FastOperator:
    """Assemble the fast operator; builds the SOE on ``[h_min, b - a]`` if needed."""
    regime = regime_of(alpha)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    beta = 1.0 + alpha if regime == SUB else alpha
    if soe is None:
        soe = build_soe(beta, eps, mesh.h_min, mesh.length)
    h = _padded_steps(mesh)
    if tabulate is None:
        tabulate = mesh.N * soe.Ne <= TABLE_BUDGET
    coeffs = precompute_coefficients(mesh, soe, alpha) if tabulate else None
    if not tabulate:
        _check_soe_window(mesh, soe)
    eta = _eta(h, alpha)
    lower, diag, upper = _stencil(h, alpha, scheme, eta)
    for arr in (eta, lower, diag, upper):
        arr.setflags(write=False)
    return FastOperator(
        mesh=mesh,
        alpha=float(alpha),
        scheme=scheme,
        C_alpha=normalization_constant(alpha),
        soe=soe,
        coeffs=coeffs,
        eta=eta,
        lower=lower,
        diag=diag,
        upper=upper,
    )


def _padded(op: FastOperator, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (op.size,):
        raise ValueError(f"expected a vector of length {op.size}, got shape {v.shape}")
    u = np.zeros(op.N + 1)
    u[1:-1] = v
    return u


def _apply_stencil(lower, diag, upper, u):
    N = len(u) - 1
    return lower[1:N] * u[0:N - 1] + diag[1:N] * u[1:N] + upper[1:N] * u[2:N + 1]


def _soe_tails(op: FastOperator, u: np.ndarray) -> np.ndarray:
    """sum_s theta_s (S^L_{i,s} + S^R_{i,s}), node-indexed, length N+1."""
    out = np.zeros(op.N + 1)
    theta = op.soe.weights
    if op.coeffs is not None:
        c = op.coeffs
        if c.regime == SUB:
            _acc_sub_tab(u, c.omega, c.cell_p, c.cell_q, theta, out)
        else:
            _acc_tilde_tab(u, c.omega, c.cell_f, theta, out)
    else:
        h = _padded_steps(op.mesh)
        if op.regime == SUB:
            _acc_sub_stream(u, h, op.soe.exponents, theta, out)
        else:
            _acc_tilde_stream(u, h, op.soe.exponents, theta, out)
    return out


def apply_fast(op: FastOperator, v) -> np.ndarray:
    """Evaluate the collocation operator at the interior nodes in O(N Ne)."""
    u = _padded(op, v)
    tails = _soe_tails(op, u)[1:-1]
    local = _apply_stencil(op.lower, op.diag, op.upper, u)
    if op.regime == SUB:
        return op.C_alpha * (local - tails)
    return op.C_alpha * (local + tails / op.alpha)


def local_part_original(op: FastOperator, v) -> np.ndarray:
    """Three-point part of the original scheme (all terms outside the SOE sums).

    For alpha < 1 this includes the ``h**-alpha / alpha`` self-interaction of
    the two tails, so a constant vector on a uniform grid maps to
    ``2 h**-alpha / alpha``; for alpha >= 1 the row sums vanish.
    """
    if op.scheme != ORIGINAL:
        raise ValueError("operator uses the modified scheme")
    return _apply_stencil(op.lower, op.diag, op.upper, _padded(op, v))


def local_part_modified(op: FastOperator, v) -> np.ndarray:
    """Replacement local integral: three-point derivative stencil times eta."""
    if op.scheme != MODIFIED:
        raise ValueError("operator uses the original scheme")
    u = _padded(op, v)
    h = _padded_steps(op.mesh)
    N = op.N
    hl = h[1:N]
    hr = h[2:N + 1]
    du = (
        -hr / (hl * (hl + hr)) * u[0:N - 1]
        + (hr - hl) / (hl * hr) * u[1:N]
        + hl / (hr * (hl + hr)) * u[2:N + 1]
    )
    return du * op.eta[1:N]


def _store_sweeps(op: FastOperator, v, side: str) -> np.ndarray:
    u = _padded(op, v)
    N = op.N
    lam = op.soe.exponents
    c = op.coeffs if op.coeffs is not None else precompute_coefficients(op.mesh, op.soe, op.alpha)
    out = np.zeros((N + 1, len(lam)))
    if side == "left":
        for i in range(2, N):
            if c.regime == SUB:
                inc = c.cell_p[:, i - 1] * u[i - 1] + c.cell_q[:, i - 1] * u[i - 2]
            else:
                inc = c.cell_f[:, i - 1] * (u[i - 1] - u[i - 2])
            out[i] = c.omega[:, i] * (out[i - 1] + inc)
    else:
        for i in range(N - 2, 0, -1):
            if c.regime == SUB:
                inc = c.cell_p[:, i + 2] * u[i + 1] + c.cell_q[:, i + 2] * u[i + 2]
            else:
                inc = c.cell_f[:, i + 2] * (u[i + 1] - u[i + 2])
            out[i] = c.omega[:, i + 1] * (out[i + 1] + inc)
    return out[1:N]


def sweep_left(op: FastOperator, v) -> np.ndarray:
    """Per-channel left sums, shape (N-1, Ne); row k is node k+1.

    ``S^L`` for alpha < 1 (hat interpolant against ``exp(-lam (x_i - y))``
    over ``y <= x_{i-1}``), or its derivative counterpart for alpha >= 1.
    """
    return _store_sweeps(op, v, "left")


def sweep_right(op: FastOperator, v) -> np.ndarray:
    """Per-channel right sums, shape (N-1, Ne), mirror of :func:`sweep_left`."""
    return _store_sweeps(op, v, "right")


def materialize_fast_matrix(op: FastOperator, scaled: bool = True) -> np.ndarray:
    """Dense matrix whose column j is ``apply_fast(op, e_j)``."""
    n = op.size
    if op.N > AUDIT_CAP:
        raise ValueError(f"N={op.N} exceeds the audit cap {AUDIT_CAP}")
    M = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        M[:, j] = apply_fast(op, e)
        e[j] = 0.0
    if not scaled:
        M /= op.C_alpha
    return M


# --------------------------------------------------------------------------
# exact (non-SOE) collocation matrices


def _powdiff(base, delta, p):
    """(base + delta)**p - base**p without cancellation; base > 0, base + delta >= 0."""
    base = np.asarray(base, dtype=float)
    delta = np.asarray(delta, dtype=float)
    # spacings and steps may disagree in the last ulp; |r| > 1 is not meaningful
    r = np.maximum(delta / base, -1.0)
    with np.errstate(divide="ignore"):
        out = base**p * np.expm1(p * np.log1p(r))
    return np.where(r == -1.0, -(base**p), out)


def _j_integrals(r, gamma):
    """J0 = int_0^1 (1 + r s)**-gamma ds and J1 = int_0^1 s (1 + r s)**-gamma ds."""
    r = np.asarray(r, dtype=float)
    small = r < 0.25
    J0 = np.empty_like(r)
    J1 = np.empty_like(r)
    if np.any(small):
        rs = r[small]
        a0 = np.zeros_like(rs)
        a1 = np.zeros_like(rs)
        c = np.ones_like(rs)  # binom(-gamma, k) r^k
        for k in range(60):
            a0 += c / (k + 1)
            a1 += c / (k + 2)
            c = c * (-gamma - k) / (k + 1) * rs
        J0[small] = a0
        J1[small] = a1
    big = ~small
    if np.any(big):
        rb = r[big]
        w = np.log1p(rb)
        J0[big] = _int_pow(w, 1.0 - gamma) / rb
        J1[big] = (_int_pow(w, 2.0 - gamma) - _int_pow(w, 1.0 - gamma)) / rb**2
    return J0, J1


def _int_pow(logw, q):
    """(w**q - 1) / q, with the q -> 0 limit log(w)."""
    if q == 0.0:
        return logw
    return np.expm1(q * logw) / q


def _cell_hat_integrals(p, h, gamma):
    """Integrals of t**-gamma on [p, p+h] against the hats that are 1 at the
    near end (t = p) and at the far end (t = p+h)."""
    r = h / p
    J0, J1 = _j_integrals(r, gamma)
    scale = p**-gamma * h
    return scale * (J0 - J1), scale * J1


def _cell_flat_integral(p, h, gamma):
    """(1/h) int_p^{p+h} t**-gamma dt."""
    J0, _ = _j_integrals(h / p, gamma)
    return p**-gamma * J0


def exact_entries(mesh: GradedMesh, alpha: float, scheme: str, rows, cols) -> np.ndarray:
    """Entries (i, j) of the direct collocation matrix, C_alpha excluded.

    Same scheme as the fast operator with the exact kernel in both tails.
    ``rows``/``cols`` hold 1-based interior node indices.
    """
    regime = regime_of(alpha)
    I = np.asarray(rows, dtype=np.int64)
    J = np.asarray(cols, dtype=np.int64)
    I, J = np.broadcast_arrays(I, J)
    h = _padded_steps(mesh)
    N = mesh.N
    out = np.zeros(I.shape)
    valid = (I >= 1) & (I <= N - 1) & (J >= 1) & (J <= N - 1)
    I = np.where(valid, I, 1)
    J = np.where(valid, J, 1)

    def gap(p, q):
        return mesh.spacing(p, q)

    left = J <= I - 1
    right = J >= I + 1
    if regime == SUB:
        g = 1.0 + alpha
        # left: cell j (near hat) and cell j+1 (far hat) for j+1 <= i-1
        m = left
        near, _ = _cell_hat_integrals(gap(J[m], I[m]), h[J[m]], g)
        out[m] -= near
        m = J <= I - 2
        _, far = _cell_hat_integrals(gap(J[m] + 1, I[m]), h[J[m] + 1], g)
        out[m] -= far
        # right: cell j+1 (near hat) and cell j (far hat) for j >= i+2
        m = right
        near, _ = _cell_hat_integrals(gap(I[m], J[m]), h[J[m] + 1], g)
        out[m] -= near
        m = J >= I + 2
        _, far = _cell_hat_integrals(gap(I[m], J[m] - 1), h[J[m]], g)
        out[m] -= far
    else:
        g = alpha
        m = left
        out[m] += _cell_flat_integral(gap(J[m], I[m]), h[J[m]], g) / alpha
        m = J <= I - 2
        out[m] -= _cell_flat_integral(gap(J[m] + 1, I[m]), h[J[m] + 1], g) / alpha
        m = J >= I + 2
        out[m] -= _cell_flat_integral(gap(I[m], J[m] - 1), h[J[m]], g) / alpha
        m = right
        out[m] += _cell_flat_integral(gap(I[m], J[m]), h[J[m] + 1], g) / alpha

    lower, diag, upper = _stencil(h, alpha, scheme, _eta(h, alpha))
    m = J == I
    out[m] += diag[I[m]]
    m = J == I - 1
    out[m] += lower[I[m]]
    m = J == I + 1
    out[m] += upper[I[m]]
    out[~valid] = 0.0
    return out


def exact_matrix(mesh: GradedMesh, alpha: float, scheme: str = ORIGINAL) -> np.ndarray:
    """Dense direct collocation matrix (unscaled) for any alpha in (0, 2)."""
    if mesh.N > AUDIT_CAP * 2:
        raise ValueError(f"N={mesh.N} is too large for a dense matrix")
    idx = np.arange(1, mesh.N)
    out = np.empty((len(idx), len(idx)))
    block = 256  # rows per pass, bounds the temporaries
    for r0 in range(0, len(idx), block):
        rows = idx[r0:r0 + block]
        out[r0:r0 + len(rows)] = exact_entries(mesh, alpha, scheme, rows[:, None], idx[None, :])
    return out


@dataclass(frozen=True)
class DirectMatrix:
    alpha: float
    entries: np.ndarray = field(repr=False)


def assemble_direct_matrix(mesh: GradedMesh, alpha: float) -> DirectMatrix:
    """Closed-form direct matrix ``A^d`` for 0 < alpha < 1 (no C_alpha).

    ``a_ii = (h_i**-alpha + h_{i+1}**-alpha) / (alpha (1 - alpha))`` and, for
    ``j != i``, differences of ``|x_k - x_i|**(1-alpha)`` over the two cells
    of hat ``j``.  Power differences are formed with expm1/log1p so strongly
    graded cells do not cancel.
    """
    if regime_of(alpha) != SUB:
        raise ValueError("the closed-form direct matrix needs 0 < alpha < 1")
    h = _padded_steps(mesh)
    N = mesh.N
    p = 1.0 - alpha
    c = 1.0 / (alpha * p)
    i = np.arange(1, N)[:, None]
    j = np.arange(1, N)[None, :]
    I, J = np.broadcast_arrays(i, j)
    A = np.zeros(I.shape)
    up = J > I
    dn = J < I
    d = mesh.spacing(I, J)
    # neighbours: the gap is the shared cell, so the near power difference is exact
    d = np.where(np.abs(I - J) == 1, h[np.maximum(I, J)], d)
    # j > i: d_{j-1} = d_j - h_j, d_{j+1} = d_j + h_{j+1}
    A[up] = c * (
        _powdiff(d[up], -h[J[up]], p) / h[J[up]]
        + _powdiff(d[up], h[J[up] + 1], p) / h[J[up] + 1]
    )
    # j < i: d_{j-1} = d_j + h_j, d_{j+1} = d_j - h_{j+1}
    A[dn] = c * (
        _powdiff(d[dn], h[J[dn]], p) / h[J[dn]]
        + _powdiff(d[dn], -h[J[dn] + 1], p) / h[J[dn] + 1]
    )
    k = np.arange(1, N)
    A[k - 1, k - 1] = c * (h[k] ** -alpha + h[k + 1] ** -alpha)
    return DirectMatrix(alpha=float(alpha), entries=A)


def xi_row_sums(mesh: GradedMesh, alpha: float) -> np.ndarray:
    """Closed-form row sums of ``A^d`` (telescoped), interior nodes."""
    if regime_of(alpha) != SUB:
        raise ValueError("defined for 0 < alpha < 1")
    N = mesh.N
    p = 1.0 - alpha
    to_a, to_b = mesh.boundary_distances()
    to_a = to_a[1:N]
    to_b = to_b[1:N]
    h1 = mesh.steps[0]
    hN = mesh.steps[-1]
    # (x_i - a)^p - (x_i - x_1)^p  and  (b - x_i)^p - (x_{N-1} - x_i)^p
    left = -_powdiff(to_a, -h1, p)
    right = -_powdiff(to_b, -hN, p)
    return (left / h1 + right / hN) / (alpha * p)


def g_alpha(alpha: float, N: int, h: float) -> float:
    """Uniform-grid lower bound of -2 a^d_ij / (h_j + h_{j+1})."""
    p = 1.0 - alpha
    num = 2.0 * (N - 2) ** p - (N - 3) ** p - (N - 1) ** p
    return num / (alpha * p * h ** (1.0 + alpha))


# --------------------------------------------------------------------------
# solvability audit


@dataclass
class AuditReport:
    diag_all_positive: bool
    offdiag_all_nonpositive: bool
    min_row_gap: float
    eps_threshold: float | None
    eps: float
    passed: bool
    worst_row: int

    @property
    def eps_within_threshold(self) -> bool | None:
        if self.eps_threshold is None:
            return None
        return self.eps <= self.eps_threshold

    def lines(self):
        thr = "n/a" if self.eps_threshold is None else f"{self.eps_threshold:.6e}"
        return [
            f"diag_all_positive={self.diag_all_positive}",
            f"offdiag_all_nonpositive={self.offdiag_all_nonpositive}",
            f"min_row_gap={self.min_row_gap:.6e} (row {self.worst_row})",
            f"eps={self.eps:.3e} eps_threshold={thr}",
            f"passed={self.passed}",
        ]


def audit_solvability(M, mesh: GradedMesh | None = None, alpha: float | None = None,
                      eps: float = 1e-8) -> AuditReport:
    """Sign pattern and strict diagonal dominance of a square matrix.

    When the mesh and an alpha < 1 are given, the SOE tolerance threshold
    ``min{-2 a^d_ij / (h_j + h_{j+1}), Xi_i / (b - a)}`` is reported too.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("audit needs a square matrix")
    d = np.diag(M)
    off = M - np.diag(d)
    gap = d - np.abs(off).sum(axis=1)
    threshold = None
    if mesh is not None and alpha is not None and regime_of(alpha) == SUB and mesh.N - 1 == len(d):
        Ad = assemble_direct_matrix(mesh, alpha).entries
        hj = mesh.steps[:-1] + mesh.steps[1:]  # h_j + h_{j+1}, j = 1..N-1
        offd = Ad - np.diag(np.diag(Ad))
        mask = ~np.eye(len(d), dtype=bool)
        t1 = float((-2.0 * offd / hj[None, :])[mask].min())
        t2 = float(xi_row_sums(mesh, alpha).min() / mesh.length)
        threshold = min(t1, t2)
    diag_pos = bool(np.all(d > 0))
    off_nonpos = bool(np.all(off <= 0))
    worst = int(np.argmin(gap))
    return AuditReport(
        diag_all_positive=diag_pos,
        offdiag_all_nonpositive=off_nonpos,
        min_row_gap=float(gap[worst]),
        eps_threshold=threshold,
        eps=float(eps),
        passed=diag_pos and off_nonpos and bool(gap[worst] > 0),
        worst_row=worst + 1,
    )
