"""Sum-of-exponentials approximation of the power kernel ``x**-beta``.

The kernel is written as a Laplace transform,

    x**-beta = 1/Gamma(beta) * int_0^inf t**(beta-1) exp(-x t) dt,

and the integral over ``t`` is discretised by Gauss-Legendre rules on the
dyadic panels ``[2**j, 2**(j+1)]``.  Each quadrature node becomes one
exponential with exponent ``t_k`` and weight ``w_k t_k**(beta-1) / Gamma(beta)``.
The head ``[0, 2**j_head]`` with ``2**j_head <= 1/X`` is covered by a single
Gauss-Jacobi rule carrying the weight ``t**(beta-1)`` exactly; there
``exp(-x t)`` is nearly polynomial for every x in the window.

The error target is absolute (``eps``) down to the resolution of double
precision: at points where ``eps`` is below ``FLOOR_ULPS`` units in the last
place of ``x**-beta`` itself, the target becomes that relative floor.  A window
is called precision limited when this happens anywhere in it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc, roots_jacobi, roots_legendre

__all__ = [
    "SoeApproximation",
    "SoeBuildError",
    "build_soe",
    "eval_soe",
    "verify_soe",
    "soe_from_json",
    "soe_to_json",
]

J_LIMIT = 80
FLOOR_ULPS = 8.0
_U = np.finfo(float).eps / 2
_N_REF = 48
_N_MAX = 40
_PANEL_SAMPLES = 160
DEFAULT_SAMPLES = 10_000


class SoeBuildError(RuntimeError):
    """Raised when the requested accuracy cannot be reached."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


@dataclass
class SoeApproximation:
    beta: float
    eps: float
    delta_x: float
    X: float
    exponents: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    verified_error: float = math.nan
    # max over the verification grid of |error| / target(x); <= 1 means the
    # pointwise contract (absolute eps, relative floor) holds
    verified_ratio: float = math.nan

    @property
    def Ne(self) -> int:
        return len(self.exponents)

    @property
    def precision_limited(self) -> bool:
        return FLOOR_ULPS * _U * self.delta_x ** (-self.beta) > self.eps

    def target(self, x):
        """Pointwise error target max(eps, FLOOR_ULPS * u * x**-beta)."""
        x = np.asarray(x, dtype=float)
        return np.maximum(self.eps, FLOOR_ULPS * _U * x ** (-self.beta))

    def __call__(self, x):
        return eval_soe(self, x)


def _check_window(beta, eps, delta_x, X):
    if not 0.0 < beta < 2.0:
        raise ValueError(f"beta must lie in (0, 2), got {beta!r}")
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    if not (delta_x > 0.0 and X > delta_x):
        raise ValueError(f"invalid window [{delta_x!r}, {X!r}]")


def _target(x, beta, eps):
    return np.maximum(eps, FLOOR_ULPS * _U * np.power(x, -beta))


def _geometric(lo, hi, n, dtype=float):
    t = np.linspace(0.0, 1.0, n, dtype=dtype)
    lo = dtype(lo)
    hi = dtype(hi)
    out = np.exp(np.log(lo) + t * (np.log(hi) - np.log(lo)))
    out[0] = lo
    out[-1] = hi
    return out


_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _rule(n):
    if n not in _RULES:
        _RULES[n] = roots_legendre(n)
    return _RULES[n]


def _panel_terms(j, n, beta, gamma_beta):
    """Nodes and weights of the n-point rule on [2**j, 2**(j+1)]."""
    z, w = _rule(n)
    lo = math.ldexp(1.0, j)
    t = lo * (1.5 + 0.5 * z)
    theta = (0.5 * lo) * w * np.power(t, beta - 1.0) / gamma_beta
    return t, theta


def _head_terms(j, n, beta, gamma_beta):
    """n-point Gauss-Jacobi rule for int_0^T t**(beta-1) g(t) dt, T = 2**j."""
    z, w = roots_jacobi(n, 0.0, beta - 1.0)
    T = math.ldexp(1.0, j)
    t = 0.5 * T * (1.0 + z)
    theta = (0.5 * T) ** beta * w / gamma_beta
    return t, theta


def _panel_sum_ld(t, theta, x):
    """sum_k theta_k exp(-t_k x) in long double, for each x."""
    t = t.astype(np.longdouble)
    theta = theta.astype(np.longdouble)
    return (theta[None, :] * np.exp(-np.outer(x, t))).sum(axis=1)


def build_soe(beta: float, eps: float, delta_x: float, X: float) -> SoeApproximation:
    """Build an SOE approximation of ``x**-beta`` on ``[delta_x, X]``.

    The error budget is split between the truncated tail
    ``[2**(j_max+1), inf)``, the quadrature rules and the pruning of
    negligible terms; the remaining quarter is slack for rounding.
    """
    _check_window(beta, eps, delta_x, X)
    beta = float(beta)
    gamma_beta = math.gamma(beta)
    share = 0.25

    # tail, worst at x = delta_x: delta_x^-beta * Q(beta, delta_x * T1)
    rel_tail = share * max(eps * delta_x**beta, FLOOR_ULPS * _U)
    j_head = math.floor(math.log2(1.0 / X))
    j_max = max(j_head, math.ceil(math.log2(1.0 / delta_x)))
    while gammaincc(beta, delta_x * math.ldexp(1.0, j_max + 1)) > rel_tail:
        j_max += 1
        if j_max > J_LIMIT:
            break
    if j_head < -J_LIMIT or j_max > J_LIMIT:
        raise SoeBuildError(
            f"panel range [{j_head}, {j_max}] exceeds the budget [-{J_LIMIT}, {J_LIMIT}]"
            f" for beta={beta}, eps={eps}, window=[{delta_x}, {X}]"
        )

    xs = _geometric(delta_x, X, _PANEL_SAMPLES, np.longdouble)
    tgt = _target(xs.astype(float), beta, eps)
    rules = [(_head_terms, j_head)] + [(_panel_terms, j) for j in range(j_head, j_max + 1)]
    tau = share / len(rules)

    ts, ths = [], []
    for make, j in rules:
        ref = _panel_sum_ld(*make(j, _N_REF, beta, gamma_beta), xs)
        for n in range(1, _N_MAX + 1):
            t, th = make(j, n, beta, gamma_beta)
            err = np.abs(_panel_sum_ld(t, th, xs) - ref).astype(float)
            # the rounding of t, theta to double is not quadrature error
            if np.all(err <= tau * tgt + 2 * _U * ref.astype(float)):
                break
        ts.append(t)
        ths.append(th)
    lam = np.concatenate(ts)
    theta = np.concatenate(ths)

    # pruning: drop terms whose summed worst-case share of the target stays
    # below the pruning budget
    contrib = theta[:, None] * np.exp(-np.outer(lam, xs.astype(float)))
    load = (contrib / tgt[None, :]).max(axis=1)
    order = np.argsort(load, kind="stable")
    dropped = np.cumsum(load[order]) <= share
    keep = np.ones(len(lam), dtype=bool)
    keep[order[dropped]] = False
    lam = lam[keep]
    theta = theta[keep]

    idx = np.argsort(lam, kind="stable")
    soe = SoeApproximation(
        beta=beta,
        eps=float(eps),
        delta_x=float(delta_x),
        X=float(X),
        exponents=np.ascontiguousarray(lam[idx]),
        weights=np.ascontiguousarray(theta[idx]),
    )
    verify_soe(soe, DEFAULT_SAMPLES)
    if not soe.verified_ratio <= 1.0:
        raise SoeBuildError(
            f"SOE for beta={beta} on [{delta_x}, {X}] reached error "
            f"{soe.verified_error:.3e} (ratio {soe.verified_ratio:.3f} of target)",
            achieved=soe.verified_error,
        )
    soe.exponents.setflags(write=False)
    soe.weights.setflags(write=False)
    return soe


def eval_soe(soe: SoeApproximation, x):
    """Evaluate ``sum_s theta_s exp(-lambda_s x)`` for x > 0."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0):
        raise ValueError("SOE is only defined for x > 0")
    vals = np.exp(-np.multiply.outer(xa, soe.exponents)) @ soe.weights
    return float(vals) if np.ndim(vals) == 0 else vals


def verify_soe(soe: SoeApproximation, samples: int = DEFAULT_SAMPLES) -> float:
    """Max |x**-beta - soe(x)| over a geometric grid of ``samples`` points.

    Both the kernel and the exponential sum are evaluated in long double so
    the measurement reflects the stored (double) parameters, not the rounding
    of the check itself.  Updates ``verified_error`` and ``verified_ratio``.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    xs = _geometric(soe.delta_x, soe.X, samples, np.longdouble)
    lam = soe.exponents.astype(np.longdouble)
    theta = soe.weights.astype(np.longdouble)
    beta = np.longdouble(soe.beta)
    worst = 0.0
    ratio = 0.0
    chunk = max(1, 2_000_000 // max(1, len(lam)))
    for k in range(0, samples, chunk):
        x = xs[k:k + chunk]
        approx = (theta[None, :] * np.exp(-np.outer(x, lam))).sum(axis=1)
        err = np.abs(np.power(x, -beta) - approx).astype(float)
        worst = max(worst, float(err.max()))
        ratio = max(ratio, float((err / soe.target(x.astype(float))).max()))
    soe.verified_error = worst
    soe.verified_ratio = ratio
    return worst


def soe_to_json(soe: SoeApproximation) -> str:
    return json.dumps(
        {
            "beta": soe.beta,
            "eps": soe.eps,
            "delta_x": soe.delta_x,
            "X": soe.X,
            "exponents": soe.exponents.tolist(),
            "weights": soe.weights.tolist(),
            "verified_error": soe.verified_error,
            "verified_ratio": soe.verified_ratio,
        }
    )


def soe_from_json(text: str) -> SoeApproximation:
    d = json.loads(text)
    return SoeApproximation(
        beta=d["beta"],
        eps=d["eps"],
        delta_x=d["delta_x"],
        X=d["X"],
        exponents=np.asarray(d["exponents"], dtype=float),
        weights=np.asarray(d["weights"], dtype=float),
        verified_error=d.get("verified_error", math.nan),
        verified_ratio=d.get("verified_ratio", math.nan),
    )
