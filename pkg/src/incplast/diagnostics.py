"""Trajectory verification: stability sampling, energy bookkeeping, growth
bounds, coercivity, and the small-strain linearization limit.

All checks are pure functions of a computed trajectory (plus explicit seeds),
so re-running a report on the same data is deterministic.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as _k
from . import tensor
from .dissipation import dissipation_integral
from .flowrule import (
    linear_force,
    linear_stress,
    linearized_rate,
    linearized_tensors,
)
from .grid import external_power, external_work
from .material import FlowConstants, MaterialParams, first_piola, thermo_force, validate_params
from .solver import StateField, Trajectory, total_energy

__all__ = [
    "CheckResult",
    "DiagnosticsReport",
    "BalanceResult",
    "LinearizationStudy",
    "stability_test",
    "energy_balance_residual",
    "coercivity_check",
    "gronwall_check",
    "linearization_study",
    "run_report",
]

STABILITY_AMPLITUDES = (1e-3, 1e-2, 1e-1)
STABILITY_SLACK_FACTOR = 10.0
SLOPE_THRESHOLD = 0.9


@dataclass(frozen=True)
class CheckResult:
    """One verification outcome: measured slack <= 0 means the bound holds."""

    name: str
    passed: bool
    slack: float
    constants: dict
    runtime: float


@dataclass
class DiagnosticsReport:
    checks: list

    def __post_init__(self) -> None:
        names = [c.name for c in self.checks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate check names in report: {names}")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows(self):
        """(name, passed, slack, constants, runtime) tuples in a fixed order."""
        return [
            (c.name, c.passed, c.slack, dict(sorted(c.constants.items())), c.runtime)
            for c in self.checks
        ]


# ---------------------------------------------------------------------------
# stability sampling
# ---------------------------------------------------------------------------

def _gaussian_bump(grid, rng) -> np.ndarray:
    """Smooth nodal displacement field, unit sup norm, zero on clamped nodes."""
    center = grid.node_positions[rng.integers(grid.nnodes)]
    width = 0.35 * max(grid.extents)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    radial = np.exp(
        -np.sum((grid.node_positions - center) ** 2, axis=1) / (2.0 * width * width)
    )
    bump = radial[:, None] * direction[None, :]
    bump[grid.dirichlet_nodes] = 0.0
    peak = np.max(np.abs(bump))
    return bump / peak if peak > 0 else bump


def _cell_rotations(grid, rng, amplitude: float) -> np.ndarray:
    """Per-cell traceless increments of norm ``amplitude``."""
    a = np.empty((grid.ncells, 3, 3))
    for c in range(grid.ncells):
        a[c] = tensor.random_traceless(rng, amplitude)
    return np.ascontiguousarray(a)


def stability_test(traj: Trajectory, t_index: int, n_competitors: int | None = None,
                   seed: int = 1234) -> CheckResult:
    """Compare the recorded state against randomly perturbed competitors.

    Verifies energy(state) <= energy(competitor) + dissipation(state ->
    competitor plastic field) + slack: competitors are nodal Gaussian bumps in
    y combined with per-cell exponential perturbations of P at three
    amplitudes, plus the state itself and the previous state.  The dissipation
    weight uses the same mollified field the step consumed (the zero field at
    the initial time).
    """
    start = time.perf_counter()
    if n_competitors is None:
        n_competitors = traj.policy.competitor_samples
    grid, params = traj.grid, traj.params
    state = traj.states[t_index]
    t = float(traj.times[t_index])
    if t_index == 0:
        fhat = np.zeros_like(state.p_field)
    else:
        fhat = traj.mollified[t_index - 1]
    base_energy = total_energy(state, t, traj.loads, params)

    competitors = [(state.y, state.p_field)]
    if t_index >= 1:
        prev = traj.states[t_index - 1]
        competitors.append((prev.y, prev.p_field))
    rng = np.random.default_rng([seed, t_index])
    for k in range(n_competitors):
        amp = STABILITY_AMPLITUDES[k % len(STABILITY_AMPLITUDES)]
        y_hat = state.y + amp * _gaussian_bump(grid, rng)
        p_hat = _k._compose_exp(_cell_rotations(grid, rng, amp), state.p_field)
        competitors.append((y_hat, p_hat))

    worst = -math.inf
    for y_hat, p_hat in competitors:
        comp = StateField(grid, y_hat, p_hat)
        rival = total_energy(comp, t, traj.loads, params) + dissipation_integral(
            fhat, state.p_field, p_hat, params, cell_volume=grid.cell_volume
        )
        worst = max(worst, base_energy - rival)

    budget = STABILITY_SLACK_FACTOR * traj.policy.inner_tolerance
    return CheckResult(
        name=f"stability_step_{t_index}",
        passed=bool(worst <= budget),
        slack=float(worst),
        constants={"budget": budget, "competitors": len(competitors), "time": t},
        runtime=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# energy bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BalanceResult:
    """Signed energy-balance bookkeeping at one step index.

    ``residual`` compares [energy + dissipation] against [initial energy minus
    the trapezoid work integral]; it converges to zero under step halving but
    carries an O(tau) quadrature term at finite steps.  ``upper_gap`` is the
    negated worst slack of the telescoped step-minimality estimate (exact work
    increments against the frozen previous deformation), the inequality that
    holds at every finite step; ``lower_gap`` equals the signed residual and is
    only driven to zero by refinement.
    """

    residual: float
    upper_gap: float
    lower_gap: float
    work_trapezoid: float
    cumulative_dissipation: float


def energy_balance_residual(traj: Trajectory, t_index: int) -> BalanceResult:
    if not 0 <= t_index <= traj.n_steps:
        raise IndexError(f"t_index must be in 0..{traj.n_steps}, got {t_index}")
    energies = traj.energies
    times = traj.times
    tau = traj.tau
    powers = [
        external_power(traj.states[j].y, float(times[j]), traj.loads)
        for j in range(t_index + 1)
    ]
    work_trap = sum(
        0.5 * tau * (powers[j - 1] + powers[j]) for j in range(1, t_index + 1)
    )
    cum_d = float(np.sum(traj.step_dissipation[:t_index]))
    residual = (energies[t_index] + cum_d) - (energies[0] - work_trap)

    worst_structural = -math.inf if t_index >= 1 else 0.0
    cum_w = 0.0
    cum_d_run = 0.0
    for i in range(1, t_index + 1):
        y_prev = traj.states[i - 1].y
        cum_w += external_work(y_prev, float(times[i]), traj.loads) - external_work(
            y_prev, float(times[i - 1]), traj.loads
        )
        cum_d_run += traj.step_dissipation[i - 1]
        gap = (energies[i] + cum_d_run) - (energies[0] - cum_w)
        worst_structural = max(worst_structural, gap)

    return BalanceResult(
        residual=float(residual),
        upper_gap=float(-worst_structural),
        lower_gap=float(residual),
        work_trapezoid=float(work_trap),
        cumulative_dissipation=cum_d,
    )


def _coercivity_lhs(state: StateField, params: MaterialParams) -> float:
    """Cell quadrature of |grad_y P^-1|^q_e + |grad_y|^q + |P|^q_p + |grad_P|^q_r."""
    f_e = np.einsum("cij,cjk->cik", state.grad_y, np.linalg.inv(state.p_field))
    lhs = (
        np.sum(np.einsum("cij,cij->c", f_e, f_e) ** (params.q_e / 2.0))
        + np.sum(np.einsum("cij,cij->c", state.grad_y, state.grad_y) ** (params.q / 2.0))
        + np.sum(np.einsum("cij,cij->c", state.p_field, state.p_field) ** (params.q_p / 2.0))
        + np.sum(
            np.einsum("cijk,cijk->c", state.grad_p, state.grad_p) ** (params.q_r / 2.0)
        )
    )
    return float(lhs) * state.grid.cell_volume


def coercivity_check(traj: Trajectory) -> CheckResult:
    """Fit the smallest constant with norms^exponents <= c4 (1 + energy)."""
    start = time.perf_counter()
    ratios = []
    lhs_all = []
    for i, state in enumerate(traj.states):
        denom = 1.0 + float(traj.energies[i])
        lhs = _coercivity_lhs(state, traj.params)
        lhs_all.append(lhs)
        ratios.append(lhs / denom if denom > 0 else math.inf)
    finite = all(math.isfinite(r) for r in ratios)
    c4 = 1.05 * max(ratios) if finite and ratios else math.inf
    margin = min(
        c4 * (1.0 + float(traj.energies[i])) - lhs_all[i] for i in range(len(lhs_all))
    ) if finite else -math.inf
    return CheckResult(
        name="coercivity",
        passed=bool(finite and margin > 0.0),
        slack=float(-margin),
        constants={"c4": float(c4)},
        runtime=time.perf_counter() - start,
    )


def gronwall_check(traj: Trajectory) -> CheckResult:
    """Exponential growth bound 1 + E(t_i) <= c5 (1 + E(0)) exp(c5 t_i).

    c5 comes from the realized power bound |<l_rate, y_i>| <= c5 (1 + E(t_i))
    along the trajectory, inflated by 5% and floored at one.
    """
    start = time.perf_counter()
    energies = traj.energies
    times = traj.times
    denoms = 1.0 + energies
    if np.any(denoms <= 0.0):
        return CheckResult("gronwall", False, math.inf, {"c5": math.inf},
                           time.perf_counter() - start)
    powers = np.array(
        [
            external_power(traj.states[i].y, float(times[i]), traj.loads)
            for i in range(len(times))
        ]
    )
    c5 = 1.05 * max(1.0, float(np.max(np.abs(powers) / denoms)))
    bound = c5 * denoms[0] * np.exp(c5 * times)
    margin = float(np.min(bound - denoms))
    return CheckResult(
        name="gronwall",
        passed=bool(margin > 0.0),
        slack=float(-margin),
        constants={"c5": c5, "max_power_ratio": float(np.max(np.abs(powers) / denoms))},
        runtime=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# linearization limit
# ---------------------------------------------------------------------------

@dataclass
class LinearizationStudy:
    """Scaling errors of stress, driving force, and dissipation rate.

    ``errors[name][k]`` is the worst error over the probe set at
    ``epsilons[k]``; slopes are least-squares log-log fits (None with a single
    epsilon).
    """

    epsilons: np.ndarray
    errors: dict
    slopes: dict | None

    def passed(self, threshold: float = SLOPE_THRESHOLD) -> bool:
        return self.slopes is not None and all(
            s >= threshold for s in self.slopes.values()
        )


def linearization_study(params: MaterialParams, epsilons, n_samples: int = 20,
                        seed: int = 13, probes=None) -> LinearizationStudy:
    """Measure how fast the finite-strain laws approach their small-strain forms.

    Probes are triples (eta, p, pdot) with p and pdot traceless; the plastic
    state is I + eps*p, the deformation gradient I + eps*eta, the plastic rate
    eps*pdot*(I + eps*p) so its right pullback is exactly eps*pdot.  The yield
    radius and its cap scale with eps, matching how stresses shrink.
    """
    eps = np.asarray(sorted(epsilons, reverse=True), dtype=float)
    if eps.size == 0 or np.any(eps <= 0.0):
        raise ValueError(f"epsilons must be positive, got {epsilons}")
    validate_params(params)
    lt = linearized_tensors(params)

    if probes is None:
        # Rescale each probe so the linear driving force lands inside the
        # hardening band of the resistance law; at either end (cap or origin
        # of the weight) the finite and linear rates agree to roundoff for
        # every eps and the rate slope would measure noise.
        rng = np.random.default_rng(seed)
        flow = params.flow
        band = (flow.r_max - flow.r_0) / (1.0 - flow.g_0)
        probes = []
        for _ in range(n_samples):
            eta = rng.standard_normal((3, 3))
            p = tensor.random_traceless(rng, 0.75)
            dev = tensor.frobenius(tensor.deviator(linear_force(lt, eta, p)))
            scale = band * rng.uniform(0.15, 0.75) / max(dev, 1e-12)
            probes.append((scale * eta, scale * p,
                           tensor.random_traceless(rng, 1.0)))
    for _, p, pdot in probes:
        for name, m in (("p", p), ("pdot", pdot)):
            if abs(float(np.trace(m))) > 1e-12 * max(1.0, tensor.frobenius(m)):
                raise ValueError(f"linearization probe {name} must be traceless")

    from .flowrule import dissipation_rate

    eye = np.eye(3)
    errors = {"stress": np.zeros(eps.size), "force": np.zeros(eps.size),
              "rate": np.zeros(eps.size)}
    for k, e in enumerate(eps):
        scaled = replace(params, flow=FlowConstants(
            r_0=e * params.flow.r_0, g_0=params.flow.g_0, r_max=e * params.flow.r_max
        ))
        for eta, p, pdot in probes:
            f = eye + e * eta
            pl = eye + e * p
            sig_err = tensor.frobenius(
                first_piola(f, pl, params) / e - linear_stress(lt, eta, p)
            )
            n_lin = linear_force(lt, eta, p)
            frc_err = tensor.frobenius(thermo_force(f, pl, params) / e - n_lin)
            rate = dissipation_rate(f, pl, e * pdot @ pl, scaled)
            rate_err = abs(rate / (e * e) - linearized_rate(n_lin, pdot, params.flow))
            errors["stress"][k] = max(errors["stress"][k], sig_err)
            errors["force"][k] = max(errors["force"][k], frc_err)
            errors["rate"][k] = max(errors["rate"][k], rate_err)

    slopes = None
    if eps.size >= 2:
        slopes = {}
        for name, err in errors.items():
            if np.all(err > 0.0):
                slopes[name] = float(np.polyfit(np.log(eps), np.log(err), 1)[0])
            else:
                slopes[name] = math.inf  # exactly linear already
    return LinearizationStudy(epsilons=eps, errors=errors, slopes=slopes)


# ---------------------------------------------------------------------------
# composite report
# ---------------------------------------------------------------------------

def run_report(traj: Trajectory, stability_steps=None, seed: int = 1234,
               balance_budget: float | None = None) -> DiagnosticsReport:
    """Stability at sampled steps plus balance, coercivity, and growth checks."""
    n = traj.n_steps
    if stability_steps is None:
        count = min(5, n + 1)
        stability_steps = sorted({int(round(i)) for i in np.linspace(0, n, count)})
    checks = [stability_test(traj, i, seed=seed) for i in stability_steps]

    start = time.perf_counter()
    balance = energy_balance_residual(traj, n)
    if balance_budget is None:
        balance_budget = 1e-6 * (1.0 + abs(float(traj.energies[0])))
    checks.append(
        CheckResult(
            name="dissipativity",
            passed=bool(-balance.upper_gap <= balance_budget),
            slack=float(-balance.upper_gap),
            constants={
                "budget": balance_budget,
                "trapezoid_residual": balance.residual,
                "work_trapezoid": balance.work_trapezoid,
                "cumulative_dissipation": balance.cumulative_dissipation,
            },
            runtime=time.perf_counter() - start,
        )
    )
    checks.append(coercivity_check(traj))
    checks.append(gronwall_check(traj))
    return DiagnosticsReport(checks)
