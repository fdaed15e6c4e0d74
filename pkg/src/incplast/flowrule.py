"""Nonassociative von Mises flow rule and its small-strain linearization.

The yield function and plastic potential act on the rotated driving force
dev(N P^T); their gap r = g - f (clamped at r_max) is the state-dependent
weight of the rate-one dissipation.  The infinity branch for non-isochoric
rates is a float sentinel (math.inf), never fed to arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from . import material as _material
from . import tensor
from .material import FlowConstants, IndefiniteHessianError, MaterialParams, SingularPError

__all__ = [
    "FlowConstants",
    "DegenerateGradientError",
    "LinearizedTensors",
    "yield_function",
    "flow_potential",
    "resistance",
    "flow_direction",
    "reference_rate",
    "dissipation_rate",
    "complementarity_residual",
    "linearized_tensors",
    "linear_stress",
    "linear_force",
    "linearized_rate",
]

# |tr(Pdot P^-1)| above this (relative to the rate size) marks a non-isochoric rate.
ISOCHORIC_TOL = 1e-10
# |dev(N P^T)| below this leaves the flow direction undefined.
DEGENERATE_TOL = 1e-12


class DegenerateGradientError(ValueError):
    """Flow direction requested where dev(N P^T) vanishes."""


def _force_magnitude(p: np.ndarray, n: np.ndarray) -> float:
    return float(_k._force_magnitude(
        np.ascontiguousarray(n, dtype=np.float64),
        np.ascontiguousarray(p, dtype=np.float64),
    ))


def yield_function(p: np.ndarray, n: np.ndarray, flow: FlowConstants) -> float:
    """f = g_0 |dev(N P^T)| - r_0; negative inside the elastic region."""
    return flow.g_0 * _force_magnitude(p, n) - flow.r_0


def flow_potential(p: np.ndarray, n: np.ndarray) -> float:
    """g = |dev(N P^T)|, the potential whose force gradient drives the flow."""
    return _force_magnitude(p, n)


def resistance(p: np.ndarray, n: np.ndarray, flow: FlowConstants) -> float:
    """Dissipation weight r = min(r_0 + (1 - g_0)|dev(N P^T)|, r_max).

    This is the gap g - f of the potential over the yield function, clamped so
    r_0 <= r <= r_max.
    """
    return float(_k._resistance(_force_magnitude(p, n), flow.packed()))


def flow_direction(p: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Force gradient of the potential: (dev(N P^T)/|dev(N P^T)|) P."""
    p = np.asarray(p, dtype=np.float64)
    d = tensor.deviator(np.asarray(n, dtype=np.float64) @ p.T)
    mag = tensor.frobenius(d)
    if mag < DEGENERATE_TOL:
        raise DegenerateGradientError("dev(N P^T) vanishes; direction undefined")
    return (d / mag) @ p


def _rate_pullback(p: np.ndarray, pdot: np.ndarray) -> np.ndarray:
    pinv, ok = _k._inv3(np.ascontiguousarray(p, dtype=np.float64))
    if not ok:
        raise SingularPError("plastic strain not invertible")
    return np.asarray(pdot, dtype=np.float64) @ pinv


def reference_rate(p: np.ndarray, pdot: np.ndarray) -> float:
    """|Pdot P^-1| for isochoric rates, math.inf otherwise."""
    b = _rate_pullback(p, pdot)
    mag = tensor.frobenius(b)
    if abs(float(np.trace(b))) > ISOCHORIC_TOL * max(1.0, mag):
        return math.inf
    return mag


def dissipation_rate(f: np.ndarray, p: np.ndarray, pdot: np.ndarray, params: MaterialParams) -> float:
    """Instantaneous dissipation r(P, N(F,P)) |Pdot P^-1|; math.inf off SL(3) tangents."""
    rate = reference_rate(p, pdot)
    if math.isinf(rate):
        return math.inf
    if rate == 0.0:
        return 0.0
    n = _material.thermo_force(f, p, params)
    return resistance(p, n, params.flow) * rate


def complementarity_residual(p: np.ndarray, n: np.ndarray, pdot: np.ndarray, flow: FlowConstants) -> float:
    """Distance from (P, N, Pdot) to the complementarity system of the flow rule.

    Returns max(f,0) + |zeta f| + |Pdot - zeta dg/dN| with zeta the nonnegative
    projection coefficient of Pdot on the flow direction; zero exactly at
    admissible elastic states and at consistent plastic flow.
    """
    p = np.asarray(p, dtype=np.float64)
    pdot = np.asarray(pdot, dtype=np.float64)
    f = yield_function(p, n, flow)
    mag = _force_magnitude(p, n)
    rate = tensor.frobenius(pdot)
    if mag < DEGENERATE_TOL:
        if rate > DEGENERATE_TOL:
            raise DegenerateGradientError("plastic rate with vanishing dev(N P^T)")
        return max(f, 0.0)
    g_dir = flow_direction(p, n)
    zeta = max(0.0, float(np.sum(pdot * g_dir)) / float(np.sum(g_dir * g_dir)))
    align = tensor.frobenius(pdot - zeta * g_dir)
    return max(f, 0.0) + abs(zeta * f) + align


@dataclass
class LinearizedTensors:
    """Second-order expansions at the identity: elastic C and plastic H."""

    c_elastic: np.ndarray  # (3,3,3,3)
    h_plastic: np.ndarray  # (3,3,3,3)

    def apply_c(self, e: np.ndarray) -> np.ndarray:
        return np.einsum("ijkl,kl->ij", self.c_elastic, e)

    def apply_h(self, e: np.ndarray) -> np.ndarray:
        return np.einsum("ijkl,kl->ij", self.h_plastic, e)


def _fd_hessian(density, params: MaterialParams, step: float = 1e-4) -> np.ndarray:
    eye = np.eye(3)
    out = np.empty((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    a = eye.copy()
                    a[i, j] += step
                    a[k, l] += step
                    wpp = density(a, params)
                    a = eye.copy()
                    a[i, j] += step
                    a[k, l] -= step
                    wpm = density(a, params)
                    a = eye.copy()
                    a[i, j] -= step
                    a[k, l] += step
                    wmp = density(a, params)
                    a = eye.copy()
                    a[i, j] -= step
                    a[k, l] -= step
                    wmm = density(a, params)
                    out[i, j, k, l] = (wpp - wpm - wmp + wmm) / (4.0 * step**2)
    return out


def linearized_tensors(params: MaterialParams, step: float = 1e-4, seed: int = 11) -> LinearizedTensors:
    """Central-difference Hessians of the densities at the identity.

    The elastic tensor must be positive definite on symmetric directions (frame
    indifference annihilates skew ones), the plastic tensor on all directions.
    """
    c = _fd_hessian(_material.elastic_density, params, step)
    h = _fd_hessian(_material.plastic_density, params, step)
    for name, t in (("C", c), ("H", h)):
        major = np.max(np.abs(t - np.transpose(t, (2, 3, 0, 1))))
        if major > 1e-6:
            raise IndefiniteHessianError(f"{name} violates major symmetry by {major:g}")
    rng = np.random.default_rng(seed)
    for _ in range(200):
        d = rng.standard_normal((3, 3))
        sym = 0.5 * (d + d.T)
        if tensor.frobenius(sym) > 1e-6:
            sym /= tensor.frobenius(sym)
            if float(np.einsum("ij,ijkl,kl->", sym, c, sym)) <= 1e-8:
                raise IndefiniteHessianError("C not positive definite on symmetric directions")
        d /= tensor.frobenius(d)
        if float(np.einsum("ij,ijkl,kl->", d, h, d)) <= 1e-8:
            raise IndefiniteHessianError("H not positive definite")
    return LinearizedTensors(c, h)


def linear_stress(lt: LinearizedTensors, eta: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Small-strain stress C (eta - p)^sym."""
    e = np.asarray(eta, dtype=np.float64) - np.asarray(p, dtype=np.float64)
    return lt.apply_c(0.5 * (e + e.T))


def linear_force(lt: LinearizedTensors, eta: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Small-strain plastic driving force C (eta - p)^sym - H p."""
    return linear_stress(lt, eta, p) - lt.apply_h(np.asarray(p, dtype=np.float64))


def linearized_rate(n: np.ndarray, pdot: np.ndarray, flow: FlowConstants) -> float:
    """Small-strain dissipation r(I, n) |pdot| for traceless rates, inf otherwise."""
    pdot = np.asarray(pdot, dtype=np.float64)
    mag = tensor.frobenius(pdot)
    if abs(float(np.trace(pdot))) > ISOCHORIC_TOL * max(1.0, mag):
        return math.inf
    return resistance(np.eye(3), n, flow) * mag
