"""Incremental energy minimization: time loop, alternating y/P solves, history.

Each time step minimizes stored energy minus external work plus the dissipation
distance from the previous plastic state, with the dissipation weight evaluated
on the causally mollified gradient history.  The y-subproblem is smooth and
solved by L-BFGS over the free nodes (clamped nodes frozen to the identity
placement); the P-subproblem is nonsmooth and solved by proximal gradient in a
per-cell multiplicative parameterization P = exp(A) P_prev with A traceless, so
det P = 1 is preserved structurally.

A step is only ever accepted if its incremental objective (with the dissipation
recomputed by the full path metric) does not exceed the objective of the frozen
previous state, which makes the telescoped energy estimate a structural
property of the recorded trajectory rather than a hoped-for outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import _kernels as _k
from . import tensor
from .dissipation import dissipation_integral
from .grid import Grid, LoadProgram, external_work, gradient_P, gradient_y
from .material import MaterialParams, SingularPError, stored_energy
from .mollify import Kernels, space_convolve, time_convolve_discrete

__all__ = [
    "NonConvergenceError",
    "EnergyBoundError",
    "InvariantViolationError",
    "SolverPolicy",
    "StateField",
    "Trajectory",
    "assemble_load_vector",
    "total_energy",
    "minimize_y",
    "minimize_P",
    "initial_state",
    "incremental_step",
    "run_evolution",
]


class NonConvergenceError(Exception):
    """An inner solve failed to reach its tolerance (steps normally flag instead)."""


class EnergyBoundError(Exception):
    """A recorded trajectory violates the telescoped energy or growth bound."""


class InvariantViolationError(Exception):
    """A structural invariant (unimodular plastic field, uniform times) broke."""


@dataclass(frozen=True)
class SolverPolicy:
    """Iteration and tolerance budget for the per-step minimizations."""

    outer_iterations: int = 60
    y_max_iterations: int = 2000
    y_gradient_tol: float = 1e-7
    p_max_iterations: int = 150
    p_initial_step: float = 1.0
    p_tol: float = 1e-11
    outer_tol: float = 1e-9
    competitor_samples: int = 50

    def __post_init__(self) -> None:
        for name in ("outer_iterations", "y_max_iterations", "p_max_iterations",
                     "competitor_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("y_gradient_tol", "p_initial_step", "p_tol", "outer_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def inner_tolerance(self) -> float:
        """The loosest inner tolerance; stability slack is budgeted against it."""
        return max(self.y_gradient_tol, self.p_tol, self.outer_tol)


@dataclass
class StateField:
    """Nodal deformation plus cell plastic field with eagerly cached gradients."""

    grid: Grid
    y: np.ndarray
    p_field: np.ndarray
    grad_y: np.ndarray = field(init=False, repr=False)
    grad_p: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.y = self.grid.check_nodal(self.y)
        self.p_field = self.grid.check_cells(self.p_field)
        self.grad_y = gradient_y(self.grid, self.y)
        self.grad_p = gradient_P(self.grid, self.p_field)

    def replace_y(self, y: np.ndarray) -> "StateField":
        return StateField(self.grid, y, self.p_field)

    def replace_p(self, p_field: np.ndarray) -> "StateField":
        return StateField(self.grid, self.y, p_field)


def assemble_load_vector(grid: Grid, loads: LoadProgram, t: float) -> np.ndarray:
    """Nodal vector L with <l(t), y> = sum(L * y): the work pairing is linear in y."""
    b, g = loads.value_at(t)
    out = np.zeros((grid.nnodes, 3))
    cell_share = b * (grid.cell_volume / 8.0)
    for k in range(8):
        np.add.at(out, grid.cell_corner_nodes[:, k], cell_share)
    if grid.nfaces:
        face_share = g * (grid.neumann_face_area[:, None] / 4.0)
        for k in range(4):
            np.add.at(out, grid.neumann_face_nodes[:, k], face_share)
    return out


def total_energy(state: StateField, t: float, loads: LoadProgram,
                 params: MaterialParams) -> float:
    """Stored energy minus external work at time t."""
    return stored_energy(state, params) - external_work(state.y, t, loads)


# ---------------------------------------------------------------------------
# y-subproblem
# ---------------------------------------------------------------------------

def minimize_y(state: StateField, t: float, params: MaterialParams,
               loads: LoadProgram, policy: SolverPolicy, objective=None):
    """Minimize the energy over the free nodes at fixed plastic field.

    Returns (updated StateField, info).  ``objective`` overrides the physical
    objective with any callable x -> (value, gradient) on the free-DOF vector,
    which exercises the optimizer wiring on manufactured problems.
    """
    grid = state.grid
    free = grid.free_nodes
    nfree = int(free.sum())

    if objective is None:
        try:
            pinv = np.ascontiguousarray(np.linalg.inv(state.p_field))
        except np.linalg.LinAlgError as exc:
            raise SingularPError("plastic strain not invertible in some cell") from exc
        load_vec = assemble_load_vector(grid, loads, t)
        nx, ny, nz = grid.cells
        hx, hy, hz = grid.cell_sizes
        vol = grid.cell_volume
        template = state.y.copy()
        template[grid.dirichlet_nodes] = grid.node_positions[grid.dirichlet_nodes]

        def objective(x):
            y_full = template.copy()
            y_full[free] = x.reshape(nfree, 3)
            dens_sum, g_nodal, ok = _k._y_objective(
                np.ascontiguousarray(y_full), pinv, nx, ny, nz, hx, hy, hz,
                params.elastic_coeffs,
            )
            if not ok:
                return math.inf, np.zeros(3 * nfree)
            val = dens_sum * vol - float(np.sum(load_vec * y_full))
            grad = g_nodal * vol - load_vec
            return val, grad[free].ravel()

        x0 = template[free].ravel()
    else:
        x0 = state.y[free].ravel()

    f0, _ = objective(x0)
    res = _scipy_minimize(
        objective, x0, jac=True, method="L-BFGS-B",
        options={
            "maxiter": policy.y_max_iterations,
            "gtol": policy.y_gradient_tol,
            "ftol": 1e-18,
            "maxcor": 30,
            "maxls": 60,
        },
    )
    x_best = res.x if res.fun <= f0 else x0
    val, grad = objective(x_best)
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0

    y_new = state.y.copy()
    y_new[grid.dirichlet_nodes] = grid.node_positions[grid.dirichlet_nodes]
    y_new[free] = x_best.reshape(nfree, 3)
    info = {
        "converged": bool(grad_norm <= policy.y_gradient_tol),
        "iterations": int(res.nit),
        "grad_norm": grad_norm,
        "objective": float(val),
    }
    return state.replace_y(y_new), info


# ---------------------------------------------------------------------------
# P-subproblem
# ---------------------------------------------------------------------------

def _cell_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("cij,cij->c", a, a))


def _midpoint_weights(a: np.ndarray, p_prev: np.ndarray, fhat: np.ndarray,
                      params: MaterialParams) -> np.ndarray:
    """Per-cell dissipation weight at the half-increment probe exp(A/2) P_prev."""
    probe = _k._compose_exp(np.ascontiguousarray(0.5 * a), p_prev)
    r, _ok = _k._resistance_weights(
        np.ascontiguousarray(fhat), probe, params.elastic_coeffs,
        params.plastic_coeffs, params.flow.packed(),
    )
    return r


def minimize_P(state: StateField, p_prev: np.ndarray, fhat: np.ndarray,
               params: MaterialParams, policy: SolverPolicy,
               a_init: np.ndarray | None = None):
    """Proximal-gradient minimization of energy plus the one-segment
    dissipation model over the traceless increment field A, P = exp(A) P_prev.

    The per-cell model cost is r(midpoint probe) * |A| * cellvol, the exact
    single-arc candidate of the path metric, so the full metric never exceeds
    it.  Shrinkage with threshold step * r * cellvol produces exact zeros in
    cells whose driving force stays below the dissipation weight.
    """
    grid = state.grid
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.cell_sizes
    vol = grid.cell_volume
    ce, cp = params.elastic_coeffs, params.plastic_coeffs
    grady = state.grad_y
    p_prev = np.ascontiguousarray(p_prev)
    fhat = np.ascontiguousarray(fhat)

    def smooth_eval(a):
        p = _k._compose_exp(a, p_prev)
        total, g_p, ok = _k._p_objective(
            grady, p, nx, ny, nz, hx, hy, hz, ce, cp,
            params.mu_gradient, params.q_r, True,
        )
        if not ok:
            return math.inf, np.zeros_like(a)
        g_a = _k._chain_to_increment(a, g_p, p_prev)
        return total * vol, g_a * vol

    def weights(a):
        return _midpoint_weights(a, p_prev, fhat, params)

    a = np.zeros_like(p_prev) if a_init is None else np.ascontiguousarray(a_init.copy())
    energy, grad_a = smooth_eval(a)
    obj = energy + vol * float(np.dot(weights(a), _cell_norms(a)))
    step = policy.p_initial_step
    converged = False
    iterations = 0

    for iterations in range(1, policy.p_max_iterations + 1):
        r_frozen = weights(a)
        accepted = False
        for _ in range(40):
            b = a - step * grad_a
            nb = _cell_norms(b)
            threshold = step * vol * r_frozen
            scale = np.where(nb > threshold, 1.0 - threshold / np.maximum(nb, 1e-300), 0.0)
            a_trial = np.ascontiguousarray(scale[:, None, None] * b)
            if np.array_equal(a_trial, a):
                converged = True  # proximal fixed point at this step size
                break
            energy_t, grad_t = smooth_eval(a_trial)
            obj_t = energy_t + vol * float(np.dot(weights(a_trial), _cell_norms(a_trial)))
            if obj_t <= obj - 1e-16 * (1.0 + abs(obj)):
                decrease = obj - obj_t
                a, energy, grad_a, obj = a_trial, energy_t, grad_t, obj_t
                step = min(step * 1.5, 4.0 * policy.p_initial_step)
                accepted = True
                break
            step *= 0.5
        if converged or not accepted:
            converged = converged or not accepted
            break
        if decrease <= policy.p_tol * (1.0 + abs(obj)):
            converged = True
            break

    p_new = _k._compose_exp(a, p_prev)
    model_diss = vol * float(np.dot(weights(a), _cell_norms(a)))
    info = {
        "converged": bool(converged),
        "iterations": iterations,
        "active_cells": int(np.count_nonzero(_cell_norms(a) > 0.0)),
        "model_objective": float(obj),
        "model_dissipation": model_diss,
        "increment": a,
    }
    return state.replace_p(p_new), info


# ---------------------------------------------------------------------------
# trajectory bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Per-step records of the incremental scheme plus the mollifier history."""

    grid: Grid
    params: MaterialParams
    loads: LoadProgram
    kernels: Kernels
    policy: SolverPolicy
    tau: float

    def __post_init__(self) -> None:
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        self._times: list[float] = []
        self.states: list[StateField] = []
        self._energies: list[float] = []
        self._works: list[float] = []
        self._dissipation: list[float] = []
        self.grad_history: list[np.ndarray] = []
        self.smoothed_history: list[np.ndarray] = []
        self.mollified: list[np.ndarray] = []
        self.step_flags: list[dict] = []

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    @property
    def energies(self) -> np.ndarray:
        return np.asarray(self._energies)

    @property
    def works(self) -> np.ndarray:
        return np.asarray(self._works)

    @property
    def step_dissipation(self) -> np.ndarray:
        return np.asarray(self._dissipation)

    @property
    def n_steps(self) -> int:
        return len(self._dissipation)

    def state(self, i: int) -> StateField:
        return self.states[i]

    def _append_history(self, state: StateField) -> None:
        grad_flat = state.grad_y
        self.grad_history.append(grad_flat)
        smoothed = self.grid.flat_shape(
            space_convolve(self.grid.box_shape(grad_flat), self.kernels)
        )
        self.smoothed_history.append(np.ascontiguousarray(smoothed))
        idx = len(self.smoothed_history) - 1
        self.mollified.append(
            np.ascontiguousarray(
                time_convolve_discrete(self.smoothed_history, idx, self.tau, self.kernels)
            )
        )

    def append_initial(self, state: StateField, energy: float, work: float,
                       flags: dict) -> None:
        self._times.append(0.0)
        self.states.append(state)
        self._energies.append(float(energy))
        self._works.append(float(work))
        self.step_flags.append(flags)
        self._append_history(state)

    def append_step(self, t: float, state: StateField, energy: float, work: float,
                    dissipation: float, flags: dict) -> None:
        self._times.append(float(t))
        self.states.append(state)
        self._energies.append(float(energy))
        self._works.append(float(work))
        self._dissipation.append(float(dissipation))
        self.step_flags.append(flags)
        self._append_history(state)

    def check_invariants(self) -> None:
        times = self.times
        if len(times) >= 2:
            gaps = np.diff(times)
            if np.max(np.abs(gaps - self.tau)) > 1e-12 * max(1.0, abs(times[-1])):
                raise InvariantViolationError("trajectory times are not uniform")
        if len(self.grad_history) != len(self.states):
            raise InvariantViolationError("gradient history length mismatch")
        if self.n_steps and float(np.min(self.step_dissipation)) < 0.0:
            raise InvariantViolationError("negative dissipation increment recorded")
        for i, state in enumerate(self.states):
            drift = float(np.max(np.abs(np.linalg.det(state.p_field) - 1.0)))
            if drift > tensor.SL3_TOL:
                raise InvariantViolationError(
                    f"plastic field leaves SL(3) at step {i}: |det P - 1| = {drift:.3e}"
                )


# ---------------------------------------------------------------------------
# the scheme
# ---------------------------------------------------------------------------

def initial_state(p0: np.ndarray, params: MaterialParams, grid: Grid,
                  loads: LoadProgram, policy: SolverPolicy):
    """Minimize the t = 0 energy at the given plastic field from the identity."""
    p0 = grid.check_cells(p0)
    drift = float(np.max(np.abs(np.linalg.det(p0) - 1.0)))
    if drift > tensor.SL3_TOL:
        raise tensor.NotInSL3Error(f"initial plastic field has |det P - 1| = {drift:.3e}")
    start = StateField(grid, grid.identity_deformation(), p0)
    state, info = minimize_y(start, 0.0, params, loads, policy)
    return state, info


def incremental_step(traj: Trajectory, i: int, params: MaterialParams,
                     policy: SolverPolicy):
    """Advance the trajectory by one incremental minimization at t_i = i*tau.

    Phase one alternates the y and P solves on the cheap merit function
    energy + one-segment model cost, accepting an iterate only when the merit
    does not increase; it starts at the frozen previous state, so the merit
    never exceeds the previous state's energy at the new time.  Phase two
    evaluates the full path-metric dissipation of the final increment once and
    records the step only if energy + full dissipation still does not exceed
    the frozen bound; otherwise it falls back to the best plastically frozen
    update (and at worst the previous state itself), so the telescoped energy
    estimate is a structural property of every recorded trajectory.
    """
    if i != len(traj.states):
        raise InvariantViolationError(
            f"steps must be advanced in order: expected step {len(traj.states)}, got {i}"
        )
    t = i * traj.tau
    prev = traj.states[i - 1]
    fhat = traj.mollified[i - 1]
    p_prev = prev.p_field
    vol = traj.grid.cell_volume

    bound = total_energy(prev, t, traj.loads, params)
    current = prev
    model_diss = 0.0
    merit = bound
    flags = {"outer_iterations": 0, "y_converged": True, "p_converged": True,
             "outer_converged": False, "fallback": False}
    a_current = None

    for outer in range(1, policy.outer_iterations + 1):
        merit_before = merit

        y_state, y_info = minimize_y(current, t, params, traj.loads, policy)
        y_energy = total_energy(y_state, t, traj.loads, params)
        if y_energy + model_diss <= merit:
            current = y_state
            merit = y_energy + model_diss
        flags["y_converged"] = flags["y_converged"] and y_info["converged"]

        p_state, p_info = minimize_P(current, p_prev, fhat, params, policy,
                                     a_init=a_current)
        flags["p_converged"] = flags["p_converged"] and p_info["converged"]
        if not np.array_equal(p_state.p_field, current.p_field):
            p_merit = p_info["model_objective"] - external_work(
                current.y, t, traj.loads
            )
            if p_merit <= merit:
                current = p_state
                a_current = p_info["increment"]
                model_diss = p_info["model_dissipation"]
                merit = p_merit

        flags["outer_iterations"] = outer
        if merit_before - merit <= policy.outer_tol * (1.0 + abs(merit)):
            flags["outer_converged"] = True
            break

    if np.array_equal(current.p_field, p_prev):
        dissipation = 0.0
    else:
        dissipation = dissipation_integral(fhat, p_prev, current.p_field, params,
                                           cell_volume=vol)
    energy = total_energy(current, t, traj.loads, params)
    if energy + dissipation > bound:
        flags["fallback"] = True
        y_state, _info = minimize_y(prev, t, params, traj.loads, policy)
        y_energy = total_energy(y_state, t, traj.loads, params)
        if y_energy <= bound:
            current, energy, dissipation = y_state, y_energy, 0.0
        else:
            current, energy, dissipation = prev, bound, 0.0

    work = external_work(current.y, t, traj.loads)
    flags["objective"] = energy + dissipation
    traj.append_step(t, current, energy, work, dissipation, flags)
    return current


def _dissipativity_gaps(traj: Trajectory) -> np.ndarray:
    """Slack in the telescoped estimate: E_i + sum D <= E_0 - sum <l_j - l_{j-1}, y_{j-1}>.

    The work increments use the frozen previous deformation, which is the exact
    form the per-step minimality telescopes to; positive entries are violations.
    """
    energies = traj.energies
    times = traj.times
    gaps = np.zeros(traj.n_steps)
    cum_d = 0.0
    cum_w = 0.0
    for i in range(1, len(times)):
        y_prev = traj.states[i - 1].y
        cum_w += external_work(y_prev, times[i], traj.loads) - external_work(
            y_prev, times[i - 1], traj.loads
        )
        cum_d += traj.step_dissipation[i - 1]
        gaps[i - 1] = (energies[i] + cum_d) - (energies[0] - cum_w)
    return gaps


def run_evolution(scenario) -> Trajectory:
    """Run the incremental scheme described by a scenario object.

    The scenario supplies grid, loads, params, kernels, policy, tau, nsteps and
    optionally p0.  The returned trajectory has passed the structural
    invariants, the telescoped dissipativity estimate, and the growth bound.
    """
    grid: Grid = scenario.grid
    loads: LoadProgram = scenario.loads
    params: MaterialParams = scenario.params
    kernels: Kernels = scenario.kernels
    policy: SolverPolicy = scenario.policy
    tau = float(scenario.tau)
    nsteps = int(scenario.nsteps)
    if nsteps < 1:
        raise ValueError(f"nsteps must be at least 1, got {nsteps}")
    if kernels.kappa.size < nsteps + 1:
        raise ValueError(
            f"time kernel has {kernels.kappa.size} samples, need {nsteps + 1}"
        )
    lo, hi = loads.horizon
    if lo > 0.0 or hi < nsteps * tau - 1e-12:
        raise ValueError("load tables must cover the full time span of the run")

    p0 = getattr(scenario, "p0", None)
    if p0 is None:
        p0 = np.broadcast_to(np.eye(3), (grid.ncells, 3, 3)).copy()

    traj = Trajectory(grid, params, loads, kernels, policy, tau)
    state0, info0 = initial_state(p0, params, grid, loads, policy)
    energy0 = total_energy(state0, 0.0, loads, params)
    work0 = external_work(state0.y, 0.0, loads)
    traj.append_initial(state0, energy0, work0,
                        {"outer_iterations": 0, "y_converged": info0["converged"],
                         "p_converged": True, "objective": energy0})

    for i in range(1, nsteps + 1):
        incremental_step(traj, i, params, policy)

    traj.check_invariants()
    gaps = _dissipativity_gaps(traj)
    slack = 1e-9 * (1.0 + abs(traj.energies[0])) + 1e-12
    if gaps.size and float(gaps.max()) > slack:
        raise EnergyBoundError(
            f"telescoped dissipativity violated by {float(gaps.max()):.3e}"
        )
    from . import diagnostics

    growth = diagnostics.gronwall_check(traj)
    if not growth.passed:
        raise EnergyBoundError(
            f"growth bound violated: margin {-growth.slack:.3e} with "
            f"c5 = {growth.constants['c5']:.3e}"
        )
    return traj
