"""Structured box discretization: gradients, boundary bookkeeping, load assembly.

Nodal deformations live on a (nx+1, ny+1, nz+1) lattice flattened in
lexicographic order; plastic state and quadrature are cell-centered on the
(nx, ny, nz) cell lattice.  The face x = 0 is clamped by default (Dirichlet
nodes carry the identity deformation); every other boundary face can carry a
traction.  Loads are tables in time: piecewise linear by default, so the load
rate is the exact table slope, or a natural cubic spline when a continuously
differentiable rate is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SizeMismatchError",
    "TimeOutOfRangeError",
    "Grid",
    "LoadProgram",
    "gradient_y",
    "gradient_P",
    "external_work",
    "external_power",
]


class SizeMismatchError(Exception):
    """A nodal or cell field does not match the grid it is used with."""


class TimeOutOfRangeError(Exception):
    """A load table was queried outside the time span it covers."""


_FACE_SIDES = ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1))


@dataclass
class Grid:
    """Axis-aligned box meshed into uniform hexahedral cells; immutable.

    ``extents`` are the box side lengths, ``cells`` the cell counts per axis.
    ``dirichlet_nodes`` is a boolean node mask (default: the face x = 0); the
    remaining boundary faces form the traction boundary.
    """

    extents: tuple[float, float, float]
    cells: tuple[int, int, int]
    dirichlet_nodes: np.ndarray | None = None

    cell_sizes: tuple[float, float, float] = field(init=False)
    cell_volume: float = field(init=False)

    def __post_init__(self) -> None:
        self.extents = tuple(float(v) for v in self.extents)
        self.cells = tuple(int(v) for v in self.cells)
        if len(self.extents) != 3 or min(self.extents) <= 0.0:
            raise ValueError(f"extents must be three positive lengths, got {self.extents}")
        if len(self.cells) != 3 or min(self.cells) < 1:
            raise ValueError(f"cells must be three positive counts, got {self.cells}")
        nx, ny, nz = self.cells
        self.cell_sizes = tuple(e / n for e, n in zip(self.extents, self.cells))
        self.cell_volume = float(np.prod(self.cell_sizes))
        self.ncells = nx * ny * nz
        self.nnodes = (nx + 1) * (ny + 1) * (nz + 1)

        hx, hy, hz = self.cell_sizes
        ix, iy, iz = np.meshgrid(
            np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij"
        )
        self.node_positions = np.ascontiguousarray(
            np.stack([ix * hx, iy * hy, iz * hz], axis=-1).reshape(-1, 3).astype(float)
        )
        cx, cy, cz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        self.cell_centers = np.ascontiguousarray(
            np.stack([(cx + 0.5) * hx, (cy + 0.5) * hy, (cz + 0.5) * hz], axis=-1)
            .reshape(-1, 3)
            .astype(float)
        )

        # the 8 corner nodes of each cell, lexicographic in (dx, dy, dz)
        corners = np.empty((self.ncells, 8), dtype=np.int64)
        cxf, cyf, czf = cx.ravel(), cy.ravel(), cz.ravel()
        k = 0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    corners[:, k] = self.node_index(cxf + dx, cyf + dy, czf + dz)
                    k += 1
        self.cell_corner_nodes = corners

        if self.dirichlet_nodes is None:
            mask = np.zeros(self.nnodes, dtype=bool)
            mask[self.node_index(0, iy[0].ravel(), iz[0].ravel())] = True
            self.dirichlet_nodes = mask
        else:
            mask = np.asarray(self.dirichlet_nodes, dtype=bool)
            if mask.shape != (self.nnodes,):
                raise SizeMismatchError(
                    f"dirichlet_nodes must have shape ({self.nnodes},), got {mask.shape}"
                )
            self.dirichlet_nodes = mask.copy()
        if not self.dirichlet_nodes.any():
            raise ValueError("the clamped node set must be nonempty")
        self.free_nodes = ~self.dirichlet_nodes

        self._build_neumann_faces()

    # ---------------------------------------------------------------- indexing
    def node_index(self, ix, iy, iz):
        ny, nz = self.cells[1], self.cells[2]
        return (np.asarray(ix) * (ny + 1) + np.asarray(iy)) * (nz + 1) + np.asarray(iz)

    def cell_index(self, ix, iy, iz):
        ny, nz = self.cells[1], self.cells[2]
        return (np.asarray(ix) * ny + np.asarray(iy)) * nz + np.asarray(iz)

    def _build_neumann_faces(self) -> None:
        """Boundary faces not wholly clamped, in a fixed axis/side/cell order."""
        nx, ny, nz = self.cells
        hx, hy, hz = self.cell_sizes
        areas = {0: hy * hz, 1: hx * hz, 2: hx * hy}
        face_nodes, face_area, face_cell, face_axis, face_side = [], [], [], [], []
        for axis, side in _FACE_SIDES:
            ranges = [range(nx), range(ny), range(nz)]
            ranges[axis] = [0 if side == 0 else self.cells[axis] - 1]
            for ix in ranges[0]:
                for iy in ranges[1]:
                    for iz in ranges[2]:
                        base = [ix, iy, iz]
                        base[axis] += side
                        quad = []
                        for a in (0, 1):
                            for b in (0, 1):
                                off = [0, 0, 0]
                                off[(axis + 1) % 3] = a
                                off[(axis + 2) % 3] = b
                                quad.append(
                                    int(
                                        self.node_index(
                                            base[0] + off[0], base[1] + off[1], base[2] + off[2]
                                        )
                                    )
                                )
                        if all(self.dirichlet_nodes[q] for q in quad):
                            continue  # clamped part of the boundary carries no traction
                        face_nodes.append(quad)
                        face_area.append(areas[axis])
                        face_cell.append(int(self.cell_index(ix, iy, iz)))
                        face_axis.append(axis)
                        face_side.append(side)
        self.neumann_face_nodes = np.asarray(face_nodes, dtype=np.int64).reshape(-1, 4)
        self.neumann_face_area = np.asarray(face_area, dtype=float)
        self.neumann_face_cell = np.asarray(face_cell, dtype=np.int64)
        self.neumann_face_axis = np.asarray(face_axis, dtype=np.int64)
        self.neumann_face_side = np.asarray(face_side, dtype=np.int64)
        self.nfaces = self.neumann_face_nodes.shape[0]
        if self.nfaces:
            self.neumann_face_centers = self.node_positions[self.neumann_face_nodes].mean(axis=1)
        else:
            self.neumann_face_centers = np.zeros((0, 3))

    # ---------------------------------------------------------------- fields
    def identity_deformation(self) -> np.ndarray:
        return self.node_positions.copy()

    def check_nodal(self, y: np.ndarray) -> np.ndarray:
        arr = np.ascontiguousarray(np.asarray(y, dtype=float))
        if arr.shape != (self.nnodes, 3):
            raise SizeMismatchError(
                f"nodal field must have shape ({self.nnodes}, 3), got {arr.shape}"
            )
        return arr

    def check_cells(self, p: np.ndarray, depth: tuple[int, ...] = (3, 3)) -> np.ndarray:
        arr = np.ascontiguousarray(np.asarray(p, dtype=float))
        if arr.shape != (self.ncells, *depth):
            raise SizeMismatchError(
                f"cell field must have shape ({self.ncells}, {depth}), got {arr.shape}"
            )
        return arr

    def box_shape(self, field_flat: np.ndarray) -> np.ndarray:
        """View a flat cell field as (nx, ny, nz, ...) for the spatial mollifier."""
        return field_flat.reshape(*self.cells, *field_flat.shape[1:])

    def flat_shape(self, field_box: np.ndarray) -> np.ndarray:
        return field_box.reshape(self.ncells, *field_box.shape[3:])

    def cell_average_nodal(self, y: np.ndarray) -> np.ndarray:
        """Cell-center value of the trilinear interpolant (mean of 8 corners)."""
        return self.check_nodal(y)[self.cell_corner_nodes].mean(axis=1)


def gradient_y(grid: Grid, y: np.ndarray) -> np.ndarray:
    """Cell-centered deformation gradient of a nodal field; exact for affine y."""
    from . import _kernels as _k

    arr = grid.check_nodal(y)
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.cell_sizes
    return _k._gradient_y(arr, nx, ny, nz, hx, hy, hz)


def gradient_P(grid: Grid, p: np.ndarray) -> np.ndarray:
    """Cell-lattice gradient of a matrix field: central inside, one-sided at faces."""
    from . import _kernels as _k

    arr = grid.check_cells(p)
    nx, ny, nz = grid.cells
    hx, hy, hz = grid.cell_sizes
    return _k._gradient_p(arr, nx, ny, nz, hx, hy, hz)


@dataclass
class LoadProgram:
    """Body-force and traction tables, piecewise linear (or cubic) in time.

    ``times`` are the table knots; ``body_tables`` has one (ncells, 3) entry of
    force per volume per knot, ``traction_tables`` one (nfaces, 3) entry of
    force per area per knot on the traction faces, in grid face order.
    ``smooth=True`` replaces linear interpolation by a natural cubic spline so
    the load rate is continuous.
    """

    grid: Grid
    times: np.ndarray
    body_tables: np.ndarray
    traction_tables: np.ndarray
    smooth: bool = False

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be at least two strictly increasing knots")
        m = self.times.size
        self.body_tables = np.asarray(self.body_tables, dtype=float)
        self.traction_tables = np.asarray(self.traction_tables, dtype=float)
        if self.body_tables.shape != (m, self.grid.ncells, 3):
            raise SizeMismatchError(
                f"body_tables must have shape ({m}, {self.grid.ncells}, 3), "
                f"got {self.body_tables.shape}"
            )
        if self.traction_tables.shape != (m, self.grid.nfaces, 3):
            raise SizeMismatchError(
                f"traction_tables must have shape ({m}, {self.grid.nfaces}, 3), "
                f"got {self.traction_tables.shape}"
            )
        self._splines = None

    @classmethod
    def build(
        cls,
        grid: Grid,
        times,
        body: Callable[[np.ndarray, float], np.ndarray] | None = None,
        traction: Callable[[np.ndarray, float], np.ndarray] | None = None,
        smooth: bool = False,
    ) -> "LoadProgram":
        """Tabulate callables ``body(points, t)`` / ``traction(points, t)`` at the knots."""
        times = np.asarray(times, dtype=float)
        bt = np.zeros((times.size, grid.ncells, 3))
        tt = np.zeros((times.size, grid.nfaces, 3))
        for k, t in enumerate(times):
            if body is not None:
                bt[k] = body(grid.cell_centers, float(t))
            if traction is not None and grid.nfaces:
                tt[k] = traction(grid.neumann_face_centers, float(t))
        return cls(grid, times, bt, tt, smooth=smooth)

    @classmethod
    def zero(cls, grid: Grid, horizon: float) -> "LoadProgram":
        return cls.build(grid, [0.0, float(horizon)])

    @property
    def horizon(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def _locate(self, t: float) -> tuple[int, float]:
        t0, t1 = self.horizon
        tol = 1e-9 * max(t1 - t0, 1.0)
        if t < t0 - tol or t > t1 + tol:
            raise TimeOutOfRangeError(f"t={t} outside the load table span [{t0}, {t1}]")
        t = min(max(t, t0), t1)
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        k = min(max(k, 0), self.times.size - 2)
        return k, float(t)

    def _spline_pair(self):
        if self._splines is None:
            from scipy.interpolate import CubicSpline

            bc = "natural"
            self._splines = (
                CubicSpline(self.times, self.body_tables, axis=0, bc_type=bc),
                CubicSpline(self.times, self.traction_tables, axis=0, bc_type=bc)
                if self.grid.nfaces
                else None,
            )
        return self._splines

    def value_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(body density, traction) at time t."""
        k, t = self._locate(t)
        if self.smooth:
            sb, st = self._spline_pair()
            trac = st(t) if st is not None else self.traction_tables[0]
            return np.asarray(sb(t)), np.asarray(trac)
        dt = self.times[k + 1] - self.times[k]
        theta = (t - self.times[k]) / dt
        b = (1.0 - theta) * self.body_tables[k] + theta * self.body_tables[k + 1]
        g = (1.0 - theta) * self.traction_tables[k] + theta * self.traction_tables[k + 1]
        return b, g

    def slope_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Exact time derivative of the tables at t (table slope when linear)."""
        k, t = self._locate(t)
        if self.smooth:
            sb, st = self._spline_pair()
            trac = st(t, 1) if st is not None else np.zeros_like(self.traction_tables[0])
            return np.asarray(sb(t, 1)), np.asarray(trac)
        dt = self.times[k + 1] - self.times[k]
        db = (self.body_tables[k + 1] - self.body_tables[k]) / dt
        dg = (self.traction_tables[k + 1] - self.traction_tables[k]) / dt
        return db, dg


def _pairing(grid: Grid, y: np.ndarray, b: np.ndarray, g: np.ndarray) -> float:
    ycell = grid.cell_average_nodal(y)
    total = float(np.einsum("ci,ci->", b, ycell)) * grid.cell_volume
    if grid.nfaces:
        yface = np.asarray(y, dtype=float)[grid.neumann_face_nodes].mean(axis=1)
        total += float(np.einsum("fi,fi,f->", g, yface, grid.neumann_face_area))
    return total


def external_work(y: np.ndarray, t: float, loads: LoadProgram) -> float:
    """Load pairing: sum of body force times deformation over cells plus
    traction times deformation over faces (midpoint quadrature)."""
    b, g = loads.value_at(t)
    return _pairing(loads.grid, loads.grid.check_nodal(y), b, g)


def external_power(y: np.ndarray, t: float, loads: LoadProgram) -> float:
    """Pairing of the exact load rate with the deformation."""
    db, dg = loads.slope_at(t)
    return _pairing(loads.grid, loads.grid.check_nodal(y), db, dg)
