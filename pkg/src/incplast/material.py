"""Energy densities, constitutive forces, and parameter validation.

The elastic density is a polyconvex polynomial preset

    W_e(F) = alpha |F|^2 + beta |cof F|^2 + gamma_det (det F - 1)^2
             + delta |F|^q_e + zeta det F + w_off

with ``zeta`` and ``w_off`` computed at construction so that the gradient
vanishes at the identity and W_e(I) = 0.  It is defined on all of R^{3x3}
with polynomial growth (no det > 0 barrier).  The plastic density is

    W_p(P) = h_p/2 |P - I|^2 + (c_p/q_p) |P|^q_p + s_p tr P + p_off

with the analogous stationarity/offset corrections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from . import tensor


class SingularPError(ValueError):
    """Plastic strain is numerically singular."""


class InvalidExponentsError(ValueError):
    """Growth exponents violate 1/q_e + 1/q_p <= 1/q < 1/3 or q_r > 3."""


class NonStationaryIdentityError(ValueError):
    """A density gradient fails to vanish at the identity."""


class IndefiniteHessianError(ValueError):
    """A density Hessian at the identity is not positive definite, or the
    q_e-growth term is missing so no positive coercivity constant exists."""


@dataclass
class FlowConstants:
    """Constants of the nonassociative von Mises flow rule.

    ``r_0`` is the activation threshold, ``g_0`` scales the yield function
    (isotropic family, 3*g_0 <= 1), ``r_max`` clamps the state-dependent
    dissipation weight from above.
    """

    r_0: float = 0.1
    g_0: float = 0.3
    r_max: float = 0.5

    def __post_init__(self):
        if not self.r_0 > 0.0:
            raise ValueError(f"r_0 must be positive, got {self.r_0!r}")
        if not 0.0 < self.g_0 <= 1.0 / 3.0:
            raise ValueError(f"g_0 must lie in (0, 1/3], got {self.g_0!r}")
        if self.r_max < self.r_0:
            raise ValueError(f"r_max = {self.r_max!r} must be >= r_0 = {self.r_0!r}")

    @property
    def r_1(self) -> float:
        """Nondegeneracy constant min(r_0, 1/r_max) <= 1."""
        return min(self.r_0, 1.0 / self.r_max)

    def packed(self) -> np.ndarray:
        return np.array([self.r_0, self.g_0, self.r_max])


@dataclass
class MaterialParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma_det: float = 1.0
    delta: float = 0.05
    h_p: float = 1.0
    c_p: float = 0.05
    mu_gradient: float = 0.1
    q: float = 4.0
    q_e: float = 8.0
    q_p: float = 8.0
    q_r: float = 4.0
    flow: FlowConstants = field(default_factory=FlowConstants)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_det", "delta", "h_p", "c_p"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.mu_gradient <= 0.0:
            raise ValueError("mu_gradient must be positive")
        # stationarity correction: gradient of the preset vanishes at I
        self.zeta = -(2.0 * self.alpha + 4.0 * self.beta
                      + self.delta * self.q_e * 3.0 ** ((self.q_e - 2.0) / 2.0))
        base = 3.0 * self.alpha + 3.0 * self.beta + self.delta * 3.0 ** (self.q_e / 2.0) + self.zeta
        self.w_off = -base
        self.s_p = -self.c_p * 3.0 ** ((self.q_p - 2.0) / 2.0)
        self.p_off = -((self.c_p / self.q_p) * 3.0 ** (self.q_p / 2.0) + 3.0 * self.s_p)
        self.elastic_coeffs = np.array(
            [self.alpha, self.beta, self.gamma_det, self.delta, self.q_e, self.zeta, self.w_off]
        )
        self.plastic_coeffs = np.array([self.h_p, self.c_p, self.q_p, self.s_p, self.p_off])


def elastic_density(f_e: np.ndarray, params: MaterialParams) -> float:
    return float(_k._we_value(np.ascontiguousarray(f_e, dtype=np.float64), params.elastic_coeffs))


def elastic_gradient(f_e: np.ndarray, params: MaterialParams) -> np.ndarray:
    _, g = _k._we_value_grad(np.ascontiguousarray(f_e, dtype=np.float64), params.elastic_coeffs)
    return g


def plastic_density(p: np.ndarray, params: MaterialParams) -> float:
    return float(_k._wp_value(np.ascontiguousarray(p, dtype=np.float64), params.plastic_coeffs))


def plastic_gradient(p: np.ndarray, params: MaterialParams) -> np.ndarray:
    _, g = _k._wp_value_grad(np.ascontiguousarray(p, dtype=np.float64), params.plastic_coeffs)
    return g


def composite_density(f: np.ndarray, p: np.ndarray, params: MaterialParams) -> float:
    """W(F, P) = W_e(F P^-1) + W_p(P); the cell-local part of the stored energy."""
    pinv, ok = _k._inv3(np.ascontiguousarray(p, dtype=np.float64))
    if not ok:
        raise SingularPError("plastic strain not invertible")
    return elastic_density(np.asarray(f, dtype=np.float64) @ pinv, params) + plastic_density(p, params)


def first_piola(f: np.ndarray, p: np.ndarray, params: MaterialParams) -> np.ndarray:
    """First Piola stress d/dF of W_e(F P^-1)."""
    out, ok = _k._piola(
        np.ascontiguousarray(f, dtype=np.float64),
        np.ascontiguousarray(p, dtype=np.float64),
        params.elastic_coeffs,
    )
    if not ok:
        raise SingularPError("plastic strain not invertible")
    return out


def thermo_force(f: np.ndarray, p: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Force conjugate to the plastic strain: N = -d/dP W(F, P)."""
    out, ok = _k._thermo(
        np.ascontiguousarray(f, dtype=np.float64),
        np.ascontiguousarray(p, dtype=np.float64),
        params.elastic_coeffs,
        params.plastic_coeffs,
    )
    if not ok:
        raise SingularPError("plastic strain not invertible")
    return out


def stored_energy(state, params: MaterialParams) -> float:
    """Cell-quadrature stored energy of a grid state (no external work term).

    ``state`` is a StateField: exposes grad_y, p_field, grad_p and its grid's
    cell volume; gradients are cached eagerly so they are always current.
    """
    dens, ok = _k._energy_density_cells(
        state.grad_y, state.p_field, state.grad_p,
        params.elastic_coeffs, params.plastic_coeffs,
        params.mu_gradient, params.q_r,
    )
    if not ok:
        raise SingularPError("plastic strain not invertible in some cell")
    return float(np.sum(dens) * state.grid.cell_volume)


def polyconvex_arguments(f: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Lift F to the polyconvexity arguments (F, cof F, det F)."""
    f = np.asarray(f, dtype=np.float64)
    return f, tensor.cofactor(f), tensor.determinant(f)


def polyconvex_density(f: np.ndarray, c: np.ndarray, d: float, params: MaterialParams) -> float:
    """The convex function of (F, cof, det) whose trace on the lift is W_e."""
    f2 = float(np.sum(np.square(f)))
    return (
        params.alpha * f2
        + params.beta * float(np.sum(np.square(c)))
        + params.gamma_det * (d - 1.0) ** 2
        + params.delta * f2 ** (params.q_e / 2.0)
        + params.zeta * d
        + params.w_off
    )


def recession_density(direction, params: MaterialParams) -> float:
    """Strong-growth limit density for a direction triple (z_e, z_p, z_r).

    Directions live on the nonhomogeneous unit sphere
    |z_e|^{q_e} + |z_p|^{q_p} + |z_r|^{q_r} = 1; the value is the sum of the
    homogeneous top-order parts of the three densities.
    """
    z_e, z_p, z_r = direction
    return (
        params.delta * tensor.frobenius(z_e) ** params.q_e
        + (params.c_p / params.q_p) * tensor.frobenius(z_p) ** params.q_p
        + (params.mu_gradient / params.q_r) * tensor.frobenius(z_r) ** params.q_r
    )


@dataclass
class ParamReport:
    c_1: float
    c_2: float
    grad_e_at_identity: float
    grad_p_at_identity: float
    min_elastic_curvature: float
    min_plastic_curvature: float


def _coercivity_constant(top: float, q: float, slope: float, deg: float, offset: float) -> float:
    """A c > 0 with top*t^q - slope*t^deg + offset >= -1/c + c*t^q for all t >= 0.

    Conservative closed form: reserve half the leading coefficient to absorb the
    lower-order deficit, then pick 1/c to cover the worst constant gap.
    """
    if top <= 0.0:
        return 0.0
    half = top / 2.0
    if slope > 0.0:
        # minimum of half*t^q - slope*t^deg over t >= 0
        t_star = (deg * slope / (q * half)) ** (1.0 / (q - deg))
        m = half * t_star ** q - slope * t_star ** deg
    else:
        m = 0.0
    deficit = -(offset + m)
    if deficit <= 0.0:
        return half
    return min(half, 1.0 / deficit)


def validate_params(params: MaterialParams, n_directions: int = 200, seed: int = 7) -> ParamReport:
    """Check exponent chain, identity stationarity, Hessian definiteness; report
    feasible coercivity constants c_1 (elastic) and c_2 (plastic)."""
    q, q_e, q_p, q_r = params.q, params.q_e, params.q_p, params.q_r
    if not (1.0 / q_e + 1.0 / q_p <= 1.0 / q + 1e-12 and 1.0 / q < 1.0 / 3.0):
        raise InvalidExponentsError(f"need 1/q_e + 1/q_p <= 1/q < 1/3, got q={q}, q_e={q_e}, q_p={q_p}")
    if not q_r > 3.0:
        raise InvalidExponentsError(f"need q_r > 3, got q_r={q_r}")
    if min(q, q_e, q_p) <= 1.0:
        raise InvalidExponentsError("growth exponents must exceed 1")

    eye = np.eye(3)
    ge = tensor.frobenius(elastic_gradient(eye, params))
    gp = tensor.frobenius(plastic_gradient(eye, params))
    if ge > 1e-10 or gp > 1e-10:
        raise NonStationaryIdentityError(f"|dW_e(I)| = {ge:g}, |dW_p(I)| = {gp:g}")

    if params.delta <= 0.0:
        raise IndefiniteHessianError("delta = 0 removes the |F|^q_e growth; no positive c_1 exists")

    rng = np.random.default_rng(seed)
    h = 1e-4
    min_e = math.inf
    min_p = math.inf
    for _ in range(n_directions):
        d = rng.standard_normal((3, 3))
        d /= tensor.frobenius(d)
        curv_e = (
            elastic_density(eye + h * d, params) - 2.0 * elastic_density(eye, params)
            + elastic_density(eye - h * d, params)
        ) / h**2
        curv_p = (
            plastic_density(eye + h * d, params) - 2.0 * plastic_density(eye, params)
            + plastic_density(eye - h * d, params)
        ) / h**2
        # frame indifference zeroes the elastic form on skew directions, so
        # probe the symmetric part scale for the elastic density
        sym_sq = float(np.sum(np.square(0.5 * (d + d.T))))
        if sym_sq > 1e-4:
            min_e = min(min_e, curv_e / sym_sq)
        min_p = min(min_p, curv_p)
    if min_e <= 1e-8 or min_p <= 1e-8:
        raise IndefiniteHessianError(f"sampled curvatures: elastic {min_e:g}, plastic {min_p:g}")

    c_1 = _coercivity_constant(
        params.delta, q_e, abs(params.zeta) / 3.0 ** 1.5, 3.0, params.w_off
    )
    c_2 = _coercivity_constant(
        params.c_p / params.q_p, q_p, abs(params.s_p) * math.sqrt(3.0), 1.0, params.p_off
    )
    if c_1 <= 0.0 or c_2 <= 0.0:
        raise IndefiniteHessianError("no positive coercivity constants")
    return ParamReport(c_1, c_2, ge, gp, min_e, min_p)
