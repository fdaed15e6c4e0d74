"""Command-line entry point: scenario ingestion, runs, property checks,
linearization sweeps, and report emission.

Config files are TOML with explicit unit-bearing field names; every material
parameter is nameable and none are hard-coded here.  All CSV output uses a
fixed column order and seventeen-digit floats, so identical (config, seed)
pairs produce byte-identical files.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import tensor
from .diagnostics import CheckResult, linearization_study, run_report
from .dissipation import d_distance, dhat_distance
from .grid import Grid, LoadProgram
from .material import (
    FlowConstants,
    MaterialParams,
    composite_density,
    elastic_density,
    first_piola,
    polyconvex_density,
    thermo_force,
    validate_params,
)
from .mollify import Kernels, mollified_gradient, space_convolve
from .solver import (
    EnergyBoundError,
    InvariantViolationError,
    NonConvergenceError,
    SolverPolicy,
    run_evolution,
)

__all__ = [
    "ConfigError",
    "Scenario",
    "load_config",
    "build_scenario",
    "check_metric_properties",
    "check_constitutive_gradients",
    "check_frame_indifference",
    "check_segment_convexity",
    "check_causality",
    "cmd_run",
    "cmd_check",
    "cmd_linearize",
    "cmd_report",
    "main",
]


class ConfigError(ValueError):
    """A config file problem, naming the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


_REQUIRED = object()

# section -> field -> (python type, default); _REQUIRED means must be present.
_SCHEMA = {
    "material": {
        "elastic_frobenius_weight": (float, 1.0),
        "elastic_cofactor_weight": (float, 1.0),
        "elastic_determinant_weight": (float, 1.0),
        "elastic_growth_weight": (float, 0.05),
        "plastic_hardening_weight": (float, 1.0),
        "plastic_growth_weight": (float, 0.05),
        "mu_gradient_weight": (float, 0.1),
        "deformation_exponent": (float, 4.0),
        "elastic_exponent": (float, 8.0),
        "plastic_exponent": (float, 8.0),
        "plastic_gradient_exponent": (float, 4.0),
    },
    "flow": {
        "yield_radius": (float, 0.1),
        "gap_slope": (float, 0.3),
        "yield_radius_cap": (float, 0.5),
    },
    "grid": {
        "extent_x_length": (float, 1.0),
        "extent_y_length": (float, 1.0),
        "extent_z_length": (float, 1.0),
        "cells_x": (int, _REQUIRED),
        "cells_y": (int, _REQUIRED),
        "cells_z": (int, _REQUIRED),
    },
    "time": {
        "horizon_time": (float, _REQUIRED),
        "step_time": (float, _REQUIRED),
    },
    "mollifier": {
        "decay_rate_per_time": (float, 2.0),
        "radius_cells": (int, 2),
    },
    "loading": {
        "kind": (str, "shear_ramp"),
        "traction_rate_force_per_area_time": (float, 0.6),
        "body_rate_force_per_volume_time": (float, 0.0),
    },
    "solver": {
        "outer_iterations": (int, 60),
        "y_max_iterations": (int, 2000),
        "y_gradient_tol": (float, 1e-7),
        "p_max_iterations": (int, 150),
        "p_initial_step": (float, 1.0),
        "p_tol": (float, 1e-11),
        "outer_tol": (float, 1e-9),
        "competitor_samples": (int, 50),
    },
    "run": {
        "seed": (int, 1234),
        "output_dir": (str, "out"),
        "dump_fields": (bool, False),
        "legacy_vtk": (bool, False),
    },
}

_LOAD_KINDS = ("none", "shear_ramp", "body_ramp")


@dataclass
class Scenario:
    """Everything a run needs, resolved from config plus flag overrides."""

    config_path: Path
    grid: Grid
    params: MaterialParams
    kernels: Kernels
    loads: LoadProgram
    policy: SolverPolicy
    tau: float
    nsteps: int
    horizon: float
    seed: int
    output_dir: Path
    dump_fields: bool
    legacy_vtk: bool


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from exc
    return raw


def _validated(raw: dict) -> dict:
    merged = {}
    for section, fields in _SCHEMA.items():
        merged[section] = {
            name: default for name, (_kind, default) in fields.items()
            if default is not _REQUIRED
        }
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")
        if not isinstance(content, dict):
            raise ConfigError(section, "must be a table of fields")
        for name, value in content.items():
            if name not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{name}", "unknown field")
            kind, _default = _SCHEMA[section][name]
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{section}.{name}",
                                      f"expected a number, got {value!r}")
                value = float(value)
            elif kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{section}.{name}",
                                      f"expected an integer, got {value!r}")
            elif kind is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"{section}.{name}",
                                      f"expected true/false, got {value!r}")
            elif kind is str:
                if not isinstance(value, str):
                    raise ConfigError(f"{section}.{name}",
                                      f"expected a string, got {value!r}")
            merged[section][name] = value
    for section, fields in _SCHEMA.items():
        for name in fields:
            if name not in merged[section]:
                raise ConfigError(f"{section}.{name}", "required field is missing")
    return merged


def _build_loads(grid: Grid, kind: str, traction_rate: float, body_rate: float,
                 horizon: float) -> LoadProgram:
    if kind not in _LOAD_KINDS:
        raise ConfigError("loading.kind",
                          f"unknown kind {kind!r}, expected one of {_LOAD_KINDS}")
    x_max = grid.extents[0]

    def traction(x, t):
        g = np.zeros_like(x)
        if kind == "shear_ramp":
            g[np.abs(x[:, 0] - x_max) < 1e-9 * max(1.0, x_max), 1] = traction_rate * t
        return g

    def body(x, t):
        b = np.zeros_like(x)
        if kind == "body_ramp":
            b[:, 1] = body_rate * t
        return b

    if kind == "none":
        return LoadProgram.zero(grid, horizon)
    return LoadProgram.build(grid, [0.0, horizon], body=body, traction=traction)


def build_scenario(config: dict, config_path="<memory>", tau: float | None = None,
                   nsteps: int | None = None, out: str | None = None,
                   seed: int | None = None, dump_fields: bool | None = None) -> Scenario:
    cfg = _validated(config)

    mat = cfg["material"]
    flw = cfg["flow"]
    try:
        flow = FlowConstants(r_0=flw["yield_radius"], g_0=flw["gap_slope"],
                             r_max=flw["yield_radius_cap"])
    except ValueError as exc:
        raise ConfigError("flow", str(exc)) from exc
    try:
        params = MaterialParams(
            alpha=mat["elastic_frobenius_weight"],
            beta=mat["elastic_cofactor_weight"],
            gamma_det=mat["elastic_determinant_weight"],
            delta=mat["elastic_growth_weight"],
            h_p=mat["plastic_hardening_weight"],
            c_p=mat["plastic_growth_weight"],
            mu_gradient=mat["mu_gradient_weight"],
            q=mat["deformation_exponent"],
            q_e=mat["elastic_exponent"],
            q_p=mat["plastic_exponent"],
            q_r=mat["plastic_gradient_exponent"],
            flow=flow,
        )
        validate_params(params)
    except ValueError as exc:
        raise ConfigError("material", str(exc)) from exc

    grd = cfg["grid"]
    try:
        grid = Grid(
            (grd["extent_x_length"], grd["extent_y_length"], grd["extent_z_length"]),
            (grd["cells_x"], grd["cells_y"], grd["cells_z"]),
        )
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from exc

    horizon = cfg["time"]["horizon_time"]
    if horizon <= 0.0:
        raise ConfigError("time.horizon_time", f"must be positive, got {horizon}")
    step = cfg["time"]["step_time"]
    if nsteps is not None:
        if nsteps < 1:
            raise ConfigError("time.step_time", f"--nsteps must be >= 1, got {nsteps}")
        step = horizon / nsteps
    elif tau is not None:
        step = tau
    if step <= 0.0:
        raise ConfigError("time.step_time", f"must be positive, got {step}")
    count = int(round(horizon / step))
    if count < 1 or abs(count * step - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigError(
            "time.step_time",
            f"step {step} must divide horizon {horizon} into whole steps",
        )

    mol = cfg["mollifier"]
    if mol["decay_rate_per_time"] <= 0.0:
        raise ConfigError("mollifier.decay_rate_per_time",
                          f"must be positive, got {mol['decay_rate_per_time']}")
    if mol["radius_cells"] < 1:
        raise ConfigError("mollifier.radius_cells",
                          f"must be at least 1, got {mol['radius_cells']}")
    try:
        kernels = Kernels.presets(mol["decay_rate_per_time"], step, count,
                                  grid.cell_sizes, radius_cells=mol["radius_cells"])
        space_convolve(np.zeros((*grid.cells, 3, 3)), kernels)
    except ValueError as exc:
        raise ConfigError("mollifier.radius_cells", str(exc)) from exc

    lod = cfg["loading"]
    loads = _build_loads(grid, lod["kind"], lod["traction_rate_force_per_area_time"],
                         lod["body_rate_force_per_volume_time"], horizon)

    sol = cfg["solver"]
    try:
        policy = SolverPolicy(
            outer_iterations=sol["outer_iterations"],
            y_max_iterations=sol["y_max_iterations"],
            y_gradient_tol=sol["y_gradient_tol"],
            p_max_iterations=sol["p_max_iterations"],
            p_initial_step=sol["p_initial_step"],
            p_tol=sol["p_tol"],
            outer_tol=sol["outer_tol"],
            competitor_samples=sol["competitor_samples"],
        )
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc

    run = cfg["run"]
    return Scenario(
        config_path=Path(str(config_path)),
        grid=grid,
        params=params,
        kernels=kernels,
        loads=loads,
        policy=policy,
        tau=step,
        nsteps=count,
        horizon=horizon,
        seed=run["seed"] if seed is None else int(seed),
        output_dir=Path(run["output_dir"] if out is None else out),
        dump_fields=bool(run["dump_fields"] if dump_fields is None else dump_fields),
        legacy_vtk=run["legacy_vtk"],
    )


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _flag(b: bool) -> str:
    return "true" if b else "false"


TRAJECTORY_COLUMNS = (
    "step,time,energy,external_work,step_dissipation,cumulative_dissipation,"
    "outer_iterations,y_converged,p_converged,fallback"
)


def write_trajectory_csv(traj, path: Path) -> None:
    """One row per incremental step (the initial state is not a step)."""
    lines = [TRAJECTORY_COLUMNS]
    cum = 0.0
    for i in range(1, traj.n_steps + 1):
        flags = traj.step_flags[i]
        cum += float(traj.step_dissipation[i - 1])
        lines.append(",".join([
            str(i),
            _fmt(traj.times[i]),
            _fmt(traj.energies[i]),
            _fmt(traj.works[i]),
            _fmt(traj.step_dissipation[i - 1]),
            _fmt(cum),
            str(flags["outer_iterations"]),
            _flag(flags["y_converged"]),
            _flag(flags["p_converged"]),
            _flag(flags.get("fallback", False)),
        ]))
    path.write_text("\n".join(lines) + "\n")


REPORT_COLUMNS = "name,passed,slack,details"


def _details(constants: dict) -> str:
    parts = []
    for key in sorted(constants):
        value = constants[key]
        if isinstance(value, bool):
            parts.append(f"{key}={_flag(value)}")
        elif isinstance(value, (int, np.integer)):
            parts.append(f"{key}={value}")
        elif isinstance(value, (float, np.floating)):
            parts.append(f"{key}={_fmt(value)}")
        else:
            parts.append(f"{key}={value}")
    return ";".join(parts)


def write_report_csv(report, path: Path) -> None:
    """Fixed columns; excludes runtimes so reruns are byte-identical."""
    lines = [REPORT_COLUMNS]
    for name, passed, slack, constants, _runtime in report.rows():
        lines.append(",".join([name, _flag(passed), _fmt(slack),
                               _details(constants)]))
    path.write_text("\n".join(lines) + "\n")


LINEARIZATION_COLUMNS = "label,stress,force,rate"


def write_linearization_csv(study, path: Path) -> None:
    """One row per epsilon with worst errors, plus a slope row when fitted."""
    lines = [LINEARIZATION_COLUMNS]
    for k, eps in enumerate(study.epsilons):
        lines.append(",".join([
            _fmt(eps),
            _fmt(study.errors["stress"][k]),
            _fmt(study.errors["force"][k]),
            _fmt(study.errors["rate"][k]),
        ]))
    if study.slopes is not None:
        lines.append(",".join([
            "slope",
            _fmt(study.slopes["stress"]),
            _fmt(study.slopes["force"]),
            _fmt(study.slopes["rate"]),
        ]))
    path.write_text("\n".join(lines) + "\n")


NODE_FIELD_COLUMNS = ("node,x_position,y_position,z_position,"
                      "deformation_x,deformation_y,deformation_z")
CELL_FIELD_COLUMNS = ("cell,center_x,center_y,center_z,"
                      "P_xx,P_xy,P_xz,P_yx,P_yy,P_yz,P_zx,P_zy,P_zz")


def write_fields_csv(state, out_dir: Path) -> None:
    grid = state.grid
    lines = [NODE_FIELD_COLUMNS]
    for n in range(grid.nnodes):
        px, py, pz = grid.node_positions[n]
        yx, yy, yz = state.y[n]
        lines.append(",".join([str(n), _fmt(px), _fmt(py), _fmt(pz),
                               _fmt(yx), _fmt(yy), _fmt(yz)]))
    (out_dir / "fields_nodes.csv").write_text("\n".join(lines) + "\n")

    lines = [CELL_FIELD_COLUMNS]
    for c in range(grid.ncells):
        cx, cy, cz = grid.cell_centers[c]
        entries = [str(c), _fmt(cx), _fmt(cy), _fmt(cz)]
        entries.extend(_fmt(v) for v in state.p_field[c].ravel())
        lines.append(",".join(entries))
    (out_dir / "fields_cells.csv").write_text("\n".join(lines) + "\n")


def write_vtk(state, path: Path) -> None:
    """Legacy ASCII structured-points dump (x-fastest point order)."""
    grid = state.grid
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.cell_sizes
    nodes = state.y.reshape(nx + 1, ny + 1, nz + 1, 3).transpose(2, 1, 0, 3)
    cells = state.p_field.reshape(nx, ny, nz, 3, 3).transpose(2, 1, 0, 3, 4)
    lines = [
        "# vtk DataFile Version 3.0",
        "incplast field dump",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}",
        "ORIGIN 0 0 0",
        f"SPACING {_fmt(hx)} {_fmt(hy)} {_fmt(hz)}",
        f"POINT_DATA {grid.nnodes}",
        "VECTORS deformation double",
    ]
    for row in nodes.reshape(-1, 3):
        lines.append(" ".join(_fmt(v) for v in row))
    lines.append(f"CELL_DATA {grid.ncells}")
    lines.append("TENSORS plastic double")
    for p in cells.reshape(-1, 3, 3):
        for row in p:
            lines.append(" ".join(_fmt(v) for v in row))
        lines.append("")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# config-driven property checks
# ---------------------------------------------------------------------------

def _fd_grad(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        probe = x.copy()
        probe[idx] += step
        hi = fun(probe)
        probe[idx] -= 2.0 * step
        lo = fun(probe)
        out[idx] = (hi - lo) / (2.0 * step)
    return out


def check_metric_properties(params: MaterialParams, n_pairs: int = 25,
                            seed: int = 0) -> CheckResult:
    """Symmetry, nondegeneracy, triangle inequality, and the two-sided
    weight bound of the dissipation distance on random unimodular pairs."""
    rng = np.random.default_rng([seed, 101])
    r1 = params.flow.r_1
    stats = {"symmetry": 0.0, "triangle": 0.0, "bounds": 0.0, "degenerate": 0.0}
    for _ in range(n_pairs):
        f = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        p1 = tensor.random_sl3(rng, 0.5)
        p2 = tensor.random_sl3(rng, 0.5)
        p3 = tensor.random_sl3(rng, 0.5)
        d12 = d_distance(f, p1, p2, params)
        d21 = d_distance(f, p2, p1, params)
        stats["symmetry"] = max(stats["symmetry"], abs(d12 - d21))
        d13 = d_distance(f, p1, p3, params)
        d32 = d_distance(f, p3, p2, params)
        stats["triangle"] = max(stats["triangle"], d12 - (d13 + d32))
        dhat = dhat_distance(p1, p2)
        stats["bounds"] = max(stats["bounds"], r1 * dhat - d12, d12 - dhat / r1)
        stats["degenerate"] = max(stats["degenerate"],
                                  d_distance(f, p1, p1, params),
                                  1e-8 - d12 if dhat > 1e-6 else 0.0)
    worst = max(stats["symmetry"] - 1e-8, stats["triangle"] - 1e-8,
                stats["bounds"] - 1e-10, stats["degenerate"] - 1e-10)
    return CheckResult("metric_properties", bool(worst <= 0.0), float(worst),
                       dict(stats, pairs=n_pairs), 0.0)


def check_constitutive_gradients(params: MaterialParams, n_states: int = 40,
                                 seed: int = 0) -> CheckResult:
    """Stress and driving force against central differences of the density."""
    rng = np.random.default_rng([seed, 102])
    worst = 0.0
    for _ in range(n_states):
        f = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
        p = tensor.random_sl3(rng, 0.5)
        pi_fd = _fd_grad(lambda x: composite_density(x, p, params), f)
        err = tensor.frobenius(first_piola(f, p, params) - pi_fd)
        worst = max(worst, err / max(1.0, tensor.frobenius(pi_fd)))
        n_fd = -_fd_grad(lambda x: composite_density(f, x, params), p)
        err = tensor.frobenius(thermo_force(f, p, params) - n_fd)
        worst = max(worst, err / max(1.0, tensor.frobenius(n_fd)))
    return CheckResult("constitutive_gradients", bool(worst <= 1e-5),
                       float(worst - 1e-5), {"states": n_states}, 0.0)


def check_frame_indifference(params: MaterialParams, n_samples: int = 40,
                             seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 103])
    worst = 0.0
    for _ in range(n_samples):
        f = np.eye(3) + 0.8 * rng.standard_normal((3, 3))
        q = tensor.random_rotation(rng)
        w = elastic_density(f, params)
        wq = elastic_density(q @ f, params)
        worst = max(worst, abs(wq - w) / max(1.0, abs(w)))
    return CheckResult("frame_indifference", bool(worst <= 1e-12),
                       float(worst - 1e-12), {"samples": n_samples}, 0.0)


def check_segment_convexity(params: MaterialParams, n_samples: int = 60,
                            seed: int = 0) -> CheckResult:
    """Midpoint convexity of the density in its polyconvex arguments."""
    rng = np.random.default_rng([seed, 104])
    worst = -np.inf
    for _ in range(n_samples):
        f0, f1, c0, c1 = rng.standard_normal((4, 3, 3))
        d0, d1 = 2.0 * rng.standard_normal(2)
        w0 = polyconvex_density(f0, c0, d0, params)
        w1 = polyconvex_density(f1, c1, d1, params)
        wm = polyconvex_density(0.5 * (f0 + f1), 0.5 * (c0 + c1),
                                0.5 * (d0 + d1), params)
        gap = (wm - 0.5 * (w0 + w1)) / max(1.0, abs(w0) + abs(w1))
        worst = max(worst, gap)
    return CheckResult("segment_convexity", bool(worst <= 1e-10),
                       float(worst - 1e-10), {"samples": n_samples}, 0.0)


def check_causality(seed: int = 0) -> CheckResult:
    """Mutating history entries at or after the current step must not change
    the smoothed gradient it consumes, exactly (bitwise); mutating the most
    recent past entry must change it."""
    rng = np.random.default_rng([seed, 105])
    tau = 0.125
    steps = 6
    kernels = Kernels.presets(2.0, tau, steps, (0.5, 0.5, 0.5), radius_cells=1)
    history = [rng.standard_normal((3, 3, 3, 3, 3)) for _ in range(steps + 1)]
    exact = True
    for i in range(1, steps + 1):
        base = mollified_gradient(history, i, tau, kernels)
        future = [h.copy() for h in history]
        for j in range(i, steps + 1):
            future[j] += 1e3
        exact = exact and np.array_equal(base, mollified_gradient(future, i, tau,
                                                                  kernels))
        if i >= 2:
            past = [h.copy() for h in history]
            past[i - 1] += 1.0
            exact = exact and not np.array_equal(
                base, mollified_gradient(past, i, tau, kernels))
    return CheckResult("mollifier_causality", bool(exact),
                       0.0 if exact else 1.0, {"steps": steps}, 0.0)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _scenario_from_args(args) -> Scenario:
    config = load_config(args.config)
    return build_scenario(
        config,
        config_path=args.config,
        tau=getattr(args, "tau", None),
        nsteps=getattr(args, "nsteps", None),
        out=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        dump_fields=True if getattr(args, "dump_fields", False) else None,
    )


def _print_report(report) -> None:
    for name, passed, slack, _constants, _runtime in report.rows():
        print(f"[check] {name}: {'PASS' if passed else 'FAIL'} (slack {_fmt(slack)})")


def cmd_run(args) -> int:
    scenario = _scenario_from_args(args)
    try:
        traj = run_evolution(scenario)
    except (EnergyBoundError, InvariantViolationError, NonConvergenceError) as exc:
        print(f"solver error after {args.config}: {exc}", file=sys.stderr)
        return 3
    report = run_report(traj, seed=scenario.seed)
    out = scenario.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_report_csv(report, out / "report.csv")
    if scenario.dump_fields:
        write_fields_csv(traj.states[-1], out)
        if scenario.legacy_vtk:
            write_vtk(traj.states[-1], out / "fields.vtk")
    _print_report(report)
    print(
        f"run: {scenario.nsteps} steps of {_fmt(scenario.tau)}, "
        f"final energy {_fmt(traj.energies[-1])}, "
        f"dissipated {_fmt(float(traj.step_dissipation.sum()))}, "
        f"wrote {out}"
    )
    return 0 if report.passed else 1


def cmd_check(args) -> int:
    scenario = _scenario_from_args(args)
    checks = [
        check_metric_properties(scenario.params, seed=scenario.seed),
        check_constitutive_gradients(scenario.params, seed=scenario.seed),
        check_frame_indifference(scenario.params, seed=scenario.seed),
        check_segment_convexity(scenario.params, seed=scenario.seed),
        check_causality(seed=scenario.seed),
    ]
    ok = True
    for check in checks:
        ok = ok and check.passed
        print(f"[check] {check.name}: {'PASS' if check.passed else 'FAIL'} "
              f"(slack {_fmt(check.slack)})")
    return 0 if ok else 1


def cmd_linearize(args) -> int:
    scenario = _scenario_from_args(args)
    epsilons = args.eps if args.eps else [1e-1, 3e-2, 1e-2, 3e-3]
    try:
        study = linearization_study(scenario.params, epsilons, seed=scenario.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = scenario.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_linearization_csv(study, out / "linearization.csv")
    if study.slopes is None:
        print("linearize: single epsilon, no slope fitted")
        return 0
    for name in ("stress", "force", "rate"):
        print(f"linearize: {name} slope {_fmt(study.slopes[name])}")
    return 0 if study.passed() else 1


def cmd_report(args) -> int:
    scenario = _scenario_from_args(args)
    try:
        traj = run_evolution(scenario)
    except (EnergyBoundError, InvariantViolationError, NonConvergenceError) as exc:
        print(f"solver error after {args.config}: {exc}", file=sys.stderr)
        return 3
    report = run_report(traj, seed=scenario.seed)
    out = scenario.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    _print_report(report)
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="incplast",
        description="Incremental variational solver for finite-strain "
                    "elastoplasticity with a nonassociative flow rule.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write trajectory + report")
    run.add_argument("config")
    run.add_argument("--tau", type=float, default=None,
                     help="override the time step (must divide the horizon)")
    run.add_argument("--nsteps", type=int, default=None,
                     help="override the step count (sets tau = horizon/nsteps)")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--seed", type=int, default=None, help="override the seed")
    run.add_argument("--dump-fields", action="store_true",
                     help="also write final nodal/cell field CSVs")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="run fast property checks")
    check.add_argument("config")
    check.set_defaults(func=cmd_check)

    lin = sub.add_parser("linearize", help="small-strain linearization sweep")
    lin.add_argument("config")
    lin.add_argument("--eps", type=float, nargs="+", default=None)
    lin.add_argument("--out", default=None)
    lin.set_defaults(func=cmd_linearize)

    rep = sub.add_parser("report", help="run a scenario and write the report only")
    rep.add_argument("config")
    rep.add_argument("--out", default=None)
    rep.add_argument("--seed", type=int, default=None)
    rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
