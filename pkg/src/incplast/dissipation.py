"""State-weighted dissipation distance on SL(3) and its space/time aggregates.

The distance between two plastic strains is the cheapest piecewise-exponential
path cost sum_k r(midpoints) |A_k| with the state-dependent weight r of the
flow rule; it is found by local path optimization and is therefore an upper
bound on the exact infimum.  Path reversal and concatenation keep the usual
metric properties within that surrogate family, and the pair is byte-ordered
before optimizing so the computed value is exactly symmetric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from . import tensor
from .material import MaterialParams
from .tensor import LogUndefinedError

__all__ = [
    "PathPolicy",
    "GridMismatchError",
    "WindowOutOfRangeError",
    "dhat_distance",
    "d_distance",
    "dissipation_integral",
    "total_dissipation",
]

# Finite-difference step (relative to local travel) for path refinement.
REFINE_FD_STEP = 1e-5


class GridMismatchError(ValueError):
    """Cell fields entering a spatial integral live on different grids."""


class WindowOutOfRangeError(ValueError):
    """Requested time window is not covered by the trajectory."""


@dataclass
class PathPolicy:
    """Discretization of the path minimization behind the distance.

    ``segments`` exponential arcs with ``quad_points`` weight evaluations per
    arc, improved by ``refine_iters`` monotone descent sweeps over the interior
    points.
    """

    segments: int = 4
    refine_iters: int = 8
    quad_points: int = 1

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError(f"segments must be >= 1, got {self.segments!r}")
        if self.refine_iters < 0:
            raise ValueError(f"refine_iters must be >= 0, got {self.refine_iters!r}")
        if self.quad_points < 1:
            raise ValueError(f"quad_points must be >= 1, got {self.quad_points!r}")


def _ordered_pair(p1: np.ndarray, p2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Canonical byte ordering, so both argument orders optimize the same path."""
    a = np.ascontiguousarray(p1, dtype=np.float64)
    b = np.ascontiguousarray(p2, dtype=np.float64)
    if b.tobytes() < a.tobytes():
        return b, a
    return a, b


def _detour_midpoint(p1: np.ndarray, p2: np.ndarray, samples: int = 50,
                     refine: int = 12) -> tuple[np.ndarray, float]:
    """Cheapest two-arc path p1 -> exp(B) p1 -> p2 when the direct log fails.

    Scans random traceless midpoint generators, then refines the best one by
    monotone finite-difference descent.  Returns (midpoint, total travel).
    """
    rng = np.random.default_rng(0)
    p2_arr = np.asarray(p2, dtype=np.float64)

    def total(b: np.ndarray) -> float:
        q = tensor.mat_exp(b) @ p1
        try:
            leg2 = tensor.frobenius(tensor.mat_log(p2_arr @ np.linalg.inv(q)))
        except LogUndefinedError:
            return math.inf
        return tensor.frobenius(b) + leg2

    best_b = None
    best_v = math.inf
    for _ in range(samples):
        b = tensor.random_traceless(rng, scale=rng.uniform(0.3, 3.0))
        v = total(b)
        if v < best_v:
            best_b, best_v = b, v
    if best_b is None:
        raise LogUndefinedError("no valid two-arc detour found")
    basis = _k._traceless_basis()
    h = 1e-5
    for _ in range(refine):
        grad = np.array([
            (total(best_b + h * e) - total(best_b - h * e)) / (2.0 * h) for e in basis
        ])
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-12:
            break
        direction = -np.einsum("i,ijk->jk", grad / gnorm, basis)
        t = 0.25 * max(best_v, 1e-6)
        for _try in range(12):
            cand = best_b + t * direction
            v = total(cand)
            if v < best_v - 1e-15:
                best_b, best_v = cand, v
                break
            t *= 0.5
    return tensor.mat_exp(best_b) @ p1, best_v


def dhat_distance(p1: np.ndarray, p2: np.ndarray) -> float:
    """Unweighted travel |log(P2 P1^{-1})|, detouring when the log fails.

    Zero exactly when the arguments coincide; bounded by a constant times
    1 + |P1| + |P2| on moderate scales.
    """
    tensor.require_sl3(p1)
    tensor.require_sl3(p2)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if np.array_equal(p1, p2):
        return 0.0
    try:
        return tensor.frobenius(tensor.mat_log(p2 @ np.linalg.inv(p1)))
    except LogUndefinedError:
        a, b = _ordered_pair(p1, p2)
        _, travel = _detour_midpoint(a, b)
        return travel


def _initial_points(a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    """Path nodes along a single exponential arc, or through a detour midpoint."""
    try:
        l = tensor.mat_log(b @ np.linalg.inv(a))
        points = np.empty((m + 1, 3, 3))
        for k in range(m + 1):
            points[k] = tensor.mat_exp((k / m) * l) @ a
        return points
    except LogUndefinedError:
        mid, _ = _detour_midpoint(a, b)
        m1 = max(1, m // 2)
        m2 = max(1, m - m1)
        l1 = tensor.mat_log(mid @ np.linalg.inv(a))
        l2 = tensor.mat_log(b @ np.linalg.inv(mid))
        points = np.empty((m1 + m2 + 1, 3, 3))
        for k in range(m1 + 1):
            points[k] = tensor.mat_exp((k / m1) * l1) @ a
        for k in range(1, m2 + 1):
            points[m1 + k] = tensor.mat_exp((k / m2) * l2) @ mid
        return points


def d_distance(f: np.ndarray, p1: np.ndarray, p2: np.ndarray, params: MaterialParams,
               policy: PathPolicy | None = None) -> float:
    """State-weighted distance between plastic strains at deformation state F.

    Minimizes sum_k r(P_mid, N(F, P_mid)) |A_k| over piecewise-exponential
    paths P_{k+1} = exp(A_k) P_k from P1 to P2; the candidate set contains the
    single-arc midpoint-weight path, so the result never exceeds the one-step
    local model cost.
    """
    if policy is None:
        policy = PathPolicy()
    tensor.require_sl3(p1)
    tensor.require_sl3(p2)
    a, b = _ordered_pair(p1, p2)
    if np.array_equal(a, b):
        return 0.0
    f = np.ascontiguousarray(f, dtype=np.float64)
    ce = params.elastic_coeffs
    cpl = params.plastic_coeffs
    fc = params.flow.packed()
    nq = policy.quad_points
    candidates = []
    single, _, ok = _k._segment_cost(f, a, b, ce, cpl, fc, nq)
    if ok:
        candidates.append(float(single))
    points = np.ascontiguousarray(_initial_points(a, b, policy.segments))
    cost, _, ok = _k._refine_path(points, f, ce, cpl, fc, nq, policy.refine_iters,
                                  REFINE_FD_STEP)
    if ok:
        candidates.append(float(cost))
    if not candidates:
        raise LogUndefinedError("no admissible path between the plastic strains")
    return min(candidates)


def dissipation_integral(fhat: np.ndarray, p1: np.ndarray, p2: np.ndarray,
                         params: MaterialParams, cell_volume: float = 1.0,
                         policy: PathPolicy | None = None) -> float:
    """Cell-quadrature integral of the distance field: sum_c D(F_c, P1_c, P2_c) vol."""
    fhat = np.asarray(fhat, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if not (fhat.shape == p1.shape == p2.shape) or fhat.ndim != 3 or fhat.shape[1:] != (3, 3):
        raise GridMismatchError(
            f"field shapes differ: {fhat.shape}, {p1.shape}, {p2.shape}"
        )
    total = 0.0
    for c in range(p1.shape[0]):
        if np.array_equal(p1[c], p2[c]):
            continue
        total += d_distance(fhat[c], p1[c], p2[c], params, policy)
    return total * cell_volume


def total_dissipation(traj, window) -> float:
    """Sum of recorded per-step dissipation over the steps inside ``window``.

    ``traj`` exposes ``times`` (len n+1) and ``step_dissipation`` (len n, entry
    i covering (times[i], times[i+1])).  The window must align with step
    boundaries and lie inside the trajectory span.
    """
    s, t = float(window[0]), float(window[1])
    times = np.asarray(traj.times, dtype=np.float64)
    diss = np.asarray(traj.step_dissipation, dtype=np.float64)
    span = max(1.0, float(times[-1] - times[0]))
    tol = 1e-9 * span
    if s > t + tol:
        raise WindowOutOfRangeError(f"window [{s}, {t}] is empty")
    if s < times[0] - tol or t > times[-1] + tol:
        raise WindowOutOfRangeError(
            f"window [{s}, {t}] outside trajectory span [{times[0]}, {times[-1]}]"
        )
    total = 0.0
    for i in range(len(diss)):
        if times[i] >= s - tol and times[i + 1] <= t + tol:
            total += float(diss[i])
    return total
