"""Time the jitted hot kernels against their pure-python fallbacks.

The package compiles its inner loops with numba unless INCPLAST_NO_NUMBA=1;
this script times both implementations of each kernel on identical inputs
(the fallback is the undecorated ``py_func`` of the same source) and prints
a table plus an optional JSON dump.  Kernels that mostly delegate to other
jitted helpers (the dissipation-path costs) show small wrapper-level gaps;
the field loops show the real compiled speedup.

Usage:
    python3 benchmarks/benchmark_kernels.py [--sizes 4 8] [--repeats 5]
                                            [--quick] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from incplast import _kernels as k
from incplast._numba import NUMBA_ENABLED, python_impl
from incplast.grid import Grid
from incplast.material import MaterialParams
from incplast.mollify import Kernels
from incplast.tensor import mat_exp, random_traceless


def build_cases(n: int, rng: np.random.Generator):
    """Representative inputs for each benchmarked kernel on an n-cube grid."""
    grid = Grid((1.0, 1.0, 1.0), (n, n, n))
    params = MaterialParams()
    ce, cp = params.elastic_coeffs, params.plastic_coeffs
    fc = params.flow.packed()
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.cell_sizes

    y = grid.node_positions + 0.05 * rng.standard_normal((grid.nnodes, 3))
    p = np.stack([mat_exp(random_traceless(rng, 0.1))
                  for _ in range(grid.ncells)])
    pinv = np.linalg.inv(p)
    grady = k._gradient_y(y, nx, ny, nz, hx, hy, hz)
    field = rng.standard_normal((grid.ncells, 3, 3))
    kern = Kernels.presets(2.0, 0.05, 4, grid.cell_sizes,
                           radius_cells=min(2, n))
    f = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    points = np.stack([np.eye(3)]
                      + [mat_exp(random_traceless(rng, 0.3 * t))
                         for t in (0.5, 1.0)])

    return {
        "gradient_y": (k._gradient_y, (y, nx, ny, nz, hx, hy, hz)),
        "y_objective": (k._y_objective, (y, pinv, nx, ny, nz, hx, hy, hz, ce)),
        "p_objective": (k._p_objective,
                        (grady, p, nx, ny, nz, hx, hy, hz, ce, cp,
                         params.mu_gradient, params.q_r, True)),
        "space_convolve": (k._space_convolve,
                           (field, nx, ny, nz, kern._offsets, kern._weights)),
        "resistance_weights": (k._resistance_weights,
                               (np.repeat(f[None], grid.ncells, axis=0), p,
                                ce, cp, fc)),
        "path_cost": (k._path_cost, (points, f, ce, cp, fc, 8)),
    }


def time_call(fun, args, repeats: int) -> float:
    fun(*args)  # warmup: trigger compilation / caches
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fun(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[4, 8])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--quick", action="store_true",
                        help="smallest grid, one repeat")
    parser.add_argument("--json", default=None, help="dump results to a file")
    args = parser.parse_args()
    sizes = [4] if args.quick else args.sizes
    repeats = 1 if args.quick else args.repeats

    if not NUMBA_ENABLED:
        print("numba is disabled (INCPLAST_NO_NUMBA); timing fallback only")

    rng = np.random.default_rng(99)
    results = []
    header = f"{'kernel':22s} {'grid':>6s} {'jit [ms]':>10s} " \
             f"{'python [ms]':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        for name, (fun, fargs) in build_cases(n, rng).items():
            jit_t = time_call(fun, fargs, repeats)
            py_t = time_call(python_impl(fun), fargs, repeats)
            speed = py_t / jit_t if jit_t > 0 else float("inf")
            print(f"{name:22s} {n:>4d}^3 {1e3 * jit_t:>10.3f} "
                  f"{1e3 * py_t:>12.3f} {speed:>7.1f}x")
            results.append({"kernel": name, "grid": n, "jit_seconds": jit_t,
                            "python_seconds": py_t, "speedup": speed})
    if args.json:
        with open(args.json, "w") as handle:
            json.dump({"numba_enabled": NUMBA_ENABLED, "results": results},
                      handle, indent=2)
        print(f"wrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
