"""Symmetric graded partitions of a bounded interval."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["GradedMesh", "MeshError", "build_graded_mesh", "mesh_stats"]


class MeshError(ValueError):
    """Invalid mesh parameters."""


class OddNodeCountError(MeshError):
    pass


class TooFewCellsError(MeshError):
    pass


class GradingError(MeshError):
    pass


class IntervalError(MeshError):
    pass


@dataclass(frozen=True)
class GradedMesh:
    """Symmetric graded partition ``a = x_0 < ... < x_N = b``.

    Nodes cluster towards both endpoints like ``(i/N)**kappa``; ``kappa = 1``
    is the uniform partition. ``steps[k]`` holds ``h_{k+1} = x_{k+1} - x_k``
    (the arrays are 0-based, the cell index in formulas is 1-based).

    ``offsets[i]`` is the distance from ``x_i`` to the nearer endpoint.  For
    strong grading the nodes next to ``b`` round to ``b`` itself, so steps,
    spacings and boundary distances are derived from the offsets, never from
    differences of ``nodes``.
    """

    a: float
    b: float
    N: int
    kappa: float
    nodes: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def L(self) -> float:
        return 0.5 * (self.b - self.a)

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def interior(self) -> np.ndarray:
        """Collocation points x_1..x_{N-1}."""
        return self.nodes[1:-1]

    @property
    def h_min(self) -> float:
        return float(self.steps.min())

    @property
    def h_max(self) -> float:
        return float(self.steps.max())

    def spacing(self, i, j):
        """|x_j - x_i| for node indices i, j (broadcasting), free of rounding at b."""
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        lo = np.minimum(i, j)
        hi = np.maximum(i, j)
        o = self.offsets
        half = self.N // 2
        out = (self.L - o[lo]) + (self.L - o[hi])
        out = np.where(hi <= half, o[hi] - o[lo], out)
        out = np.where(lo >= half, o[lo] - o[hi], out)
        return out

    def boundary_distances(self):
        """(x_i - a, b - x_i) for all nodes."""
        o = self.offsets
        idx = np.arange(self.N + 1)
        left_half = idx <= self.N // 2
        far = (self.L - o) + self.L
        return np.where(left_half, o, far), np.where(left_half, far, o)

    def reflected(self) -> np.ndarray:
        """Nodes under ``x -> a + b - x``, in increasing order."""
        return (self.a + self.b - self.nodes)[::-1]


def build_graded_mesh(a: float, b: float, N: int, kappa: float) -> GradedMesh:
    """Build the symmetric graded mesh with N cells and grading exponent kappa.

    The left half follows ``x_i = a + L (2i/N)**kappa``; the right half is the
    mirror image of the left half, which keeps the mesh exactly symmetric.
    """
    if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
        raise IntervalError(f"need a < b, got a={a!r}, b={b!r}")
    if int(N) != N:
        raise OddNodeCountError(f"N must be an integer, got {N!r}")
    N = int(N)
    if N % 2:
        raise OddNodeCountError(f"N must be even, got {N}")
    if N < 4:
        raise TooFewCellsError(f"N must be at least 4, got {N}")
    if not math.isfinite(kappa) or kappa < 1.0:
        raise GradingError(f"kappa must be >= 1, got {kappa!r}")

    a = float(a)
    b = float(b)
    L = 0.5 * (b - a)
    half = N // 2
    i = np.arange(1, half + 1, dtype=float)
    # (2i/N)**kappa via exp/log; i = 0 handled separately
    frac = np.exp(kappa * np.log(2.0 * i / N))
    frac[-1] = 1.0
    offsets = np.concatenate(([0.0], L * frac))  # x_i - a for i = 0..N/2

    nodes = np.empty(N + 1)
    nodes[: half + 1] = a + offsets
    nodes[half] = a + L
    # reflection: x_{N-i} = a + b - x_i
    nodes[half + 1:] = (b - offsets[:half])[::-1]
    nodes[0] = a
    nodes[-1] = b
    if kappa == 1.0:
        steps = np.full(N, (b - a) / N)
    else:
        left = np.diff(offsets)
        steps = np.concatenate((left, left[::-1]))
    if np.any(steps <= 0.0) or not np.all(np.isfinite(steps)):
        raise GradingError(
            f"kappa={kappa} with N={N} produces non-positive steps in double precision"
        )
    node_offsets = np.concatenate((offsets, offsets[:half][::-1]))
    for arr in (nodes, steps, node_offsets):
        arr.setflags(write=False)
    return GradedMesh(
        a=a, b=b, N=N, kappa=float(kappa), nodes=nodes, steps=steps, offsets=node_offsets
    )


def mesh_stats(mesh: GradedMesh) -> dict:
    return {"h_min": mesh.h_min, "h_max": mesh.h_max}
