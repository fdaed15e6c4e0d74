"""Causal space-time mollification of deformation-gradient histories.

The dissipation weight is evaluated on a mollified copy of the deformation
gradient rather than on the raw field.  The mollifier is separable: a
nonnegative time kernel ``kappa`` (units 1/time) convolved causally over the
step history, composed with a nonnegative spatial stencil ``phi`` (units
1/volume) applied cell-wise with the field extended by zero outside the box.

Discrete-in-time convention on a uniform step grid ``t_j = j*tau``::

    (kappa *_tau w)_0 = 0
    (kappa *_tau w)_i = sum_{j=0..i} tau * kappa_j * w_{i-j}   for i >= 1

so the field consumed by minimization step ``i`` is the convolution evaluated
at index ``i - 1`` and depends only on steps ``0 .. i-1``; step 1 sees the
zero field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HistoryTooShortError",
    "Kernels",
    "space_convolve",
    "time_convolve_discrete",
    "mollified_gradient",
]

NORMALIZATION_TOL = 1e-12


class HistoryTooShortError(Exception):
    """The step history does not reach back far enough for the requested index."""


def exponential_time_samples(decay_rate: float, tau: float, nsteps: int) -> np.ndarray:
    """Samples ``kappa_j = decay_rate * exp(-decay_rate * j * tau)``, j = 0..nsteps."""
    if decay_rate <= 0.0:
        raise ValueError(f"decay_rate must be positive, got {decay_rate}")
    if tau <= 0.0 or nsteps < 0:
        raise ValueError("need tau > 0 and nsteps >= 0")
    t = tau * np.arange(nsteps + 1, dtype=float)
    return decay_rate * np.exp(-decay_rate * t)


def truncated_gaussian_density(
    cell_sizes: tuple[float, float, float],
    radius: float,
    width: float | None = None,
) -> np.ndarray:
    """Truncated-Gaussian density samples on a cell stencil, sum*cellvol == 1.

    ``radius`` is the physical truncation radius; the per-axis stencil radius is
    ``ceil(radius / cell_size)`` cells.  ``width`` is the Gaussian standard
    deviation (default ``radius / 2``).
    """
    h = tuple(float(v) for v in cell_sizes)
    if len(h) != 3 or min(h) <= 0.0:
        raise ValueError(f"cell_sizes must be three positive lengths, got {cell_sizes}")
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    sigma = radius / 2.0 if width is None else float(width)
    if sigma <= 0.0:
        raise ValueError(f"width must be positive, got {width}")
    rad = tuple(int(math.ceil(radius / hv - 1e-12)) for hv in h)
    ax = [np.arange(-r, r + 1, dtype=float) * hv for r, hv in zip(rad, h)]
    dist2 = (
        ax[0][:, None, None] ** 2 + ax[1][None, :, None] ** 2 + ax[2][None, None, :] ** 2
    )
    raw = np.exp(-dist2 / (2.0 * sigma * sigma))
    raw[dist2 > radius * radius + 1e-12] = 0.0
    cell_volume = h[0] * h[1] * h[2]
    return raw / (raw.sum() * cell_volume)


def delta_density(cell_volume: float) -> np.ndarray:
    """Single-cell stencil acting as the identity map under space_convolve."""
    if cell_volume <= 0.0:
        raise ValueError(f"cell_volume must be positive, got {cell_volume}")
    return np.full((1, 1, 1), 1.0 / cell_volume)


@dataclass
class Kernels:
    """Sampled mollifier kernels; immutable after construction.

    ``kappa``: 1-D nonnegative time samples on the step grid, units 1/time.
    ``phi``: 3-D nonnegative density samples on an odd-shaped cell stencil,
    units 1/volume, normalized so ``phi.sum() * cell_volume == 1`` to 1e-12.
    """

    kappa: np.ndarray
    phi: np.ndarray
    cell_volume: float
    time_preset: str = "custom"
    space_preset: str = "custom"
    _offsets: np.ndarray = field(init=False, repr=False)
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.kappa = np.ascontiguousarray(np.asarray(self.kappa, dtype=float))
        self.phi = np.ascontiguousarray(np.asarray(self.phi, dtype=float))
        self.cell_volume = float(self.cell_volume)
        if self.cell_volume <= 0.0:
            raise ValueError(f"cell_volume must be positive, got {self.cell_volume}")
        if self.kappa.ndim != 1 or self.kappa.size == 0:
            raise ValueError("kappa must be a nonempty 1-D sample array")
        if not np.all(np.isfinite(self.kappa)) or np.any(self.kappa < 0.0):
            raise ValueError("kappa samples must be finite and nonnegative")
        if self.phi.ndim != 3 or any(n % 2 == 0 for n in self.phi.shape):
            raise ValueError(f"phi must be a 3-D odd-shaped stencil, got shape {self.phi.shape}")
        if not np.all(np.isfinite(self.phi)) or np.any(self.phi < 0.0):
            raise ValueError("phi samples must be finite and nonnegative")
        mass = self.phi.sum() * self.cell_volume
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise ValueError(
                f"phi must satisfy sum(phi) * cell_volume == 1 within {NORMALIZATION_TOL}, got {mass!r}"
            )
        rx, ry, rz = (n // 2 for n in self.phi.shape)
        mx, my, mz = np.meshgrid(
            np.arange(-rx, rx + 1), np.arange(-ry, ry + 1), np.arange(-rz, rz + 1), indexing="ij"
        )
        # out(x) = sum_m phi(m) * F(x - m) * cellvol: store offset -m with weight phi(m)
        self._offsets = np.ascontiguousarray(
            -np.stack([mx.ravel(), my.ravel(), mz.ravel()], axis=1).astype(np.int64)
        )
        self._weights = np.ascontiguousarray(self.phi.ravel() * self.cell_volume)

    @property
    def stencil_radius(self) -> tuple[int, int, int]:
        return tuple(n // 2 for n in self.phi.shape)

    @classmethod
    def presets(
        cls,
        decay_rate: float,
        tau: float,
        nsteps: int,
        cell_sizes: tuple[float, float, float],
        radius_cells: int = 2,
    ) -> "Kernels":
        """Exponential-decay time kernel plus truncated-Gaussian stencil.

        The spatial truncation radius is ``radius_cells`` times the largest
        cell size (so the stencil spans ``radius_cells`` cells per axis on a
        cubic grid).
        """
        if radius_cells < 0:
            raise ValueError(f"radius_cells must be nonnegative, got {radius_cells}")
        cell_volume = float(np.prod([float(v) for v in cell_sizes]))
        if radius_cells == 0:
            phi = delta_density(cell_volume)
        else:
            phi = truncated_gaussian_density(cell_sizes, radius_cells * max(cell_sizes))
        return cls(
            kappa=exponential_time_samples(decay_rate, tau, nsteps),
            phi=phi,
            cell_volume=cell_volume,
            time_preset="exponential",
            space_preset="gaussian" if radius_cells else "delta",
        )


def space_convolve(field_box: np.ndarray, kernels: Kernels) -> np.ndarray:
    """Stencil convolution of a box-shaped cell matrix field (nx,ny,nz,3,3).

    The field is extended by zero outside the box, so boundary cells see an
    attenuated stencil mass.  Linear in the field.
    """
    from . import _kernels as _k

    arr = np.ascontiguousarray(np.asarray(field_box, dtype=float))
    if arr.ndim != 5 or arr.shape[3:] != (3, 3):
        raise ValueError(f"expected a (nx, ny, nz, 3, 3) cell field, got shape {arr.shape}")
    nx, ny, nz = arr.shape[:3]
    if any(2 * r + 1 > 2 * n + 1 for r, n in zip(kernels.stencil_radius, (nx, ny, nz))):
        raise ValueError(
            f"stencil radius {kernels.stencil_radius} exceeds grid extent {(nx, ny, nz)}"
        )
    flat = arr.reshape(-1, 3, 3)
    out = _k._space_convolve(flat, nx, ny, nz, kernels._offsets, kernels._weights)
    return out.reshape(arr.shape)


def time_convolve_discrete(history, i: int, tau: float, kernels: Kernels) -> np.ndarray:
    """Causal discrete convolution of a step history, evaluated at index ``i``.

    Returns zero at ``i == 0`` and ``sum_{j=0..i} tau * kappa_j * history[i-j]``
    for ``i >= 1``; entries beyond index ``i`` are never touched.
    """
    if i < 0:
        raise ValueError(f"step index must be nonnegative, got {i}")
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(history) == 0:
        raise HistoryTooShortError("history is empty")
    first = np.asarray(history[0], dtype=float)
    if i == 0:
        return np.zeros_like(first)
    if len(history) < i + 1:
        raise HistoryTooShortError(
            f"need history entries 0..{i} ({i + 1} total), got {len(history)}"
        )
    if kernels.kappa.size < i + 1:
        raise ValueError(
            f"time kernel has {kernels.kappa.size} samples, need {i + 1} for step {i}"
        )
    out = np.zeros_like(first)
    for j in range(i + 1):
        out += (tau * kernels.kappa[j]) * np.asarray(history[i - j], dtype=float)
    return out


def mollified_gradient(grad_history, i: int, tau: float, kernels: Kernels) -> np.ndarray:
    """Space-time mollified deformation gradient consumed by step ``i``.

    Composes the spatial stencil with the causal time convolution and evaluates
    at index ``i - 1``, so step 1 receives the zero field and step ``i`` depends
    on the gradient history at steps ``0 .. i-1`` only.
    """
    if i < 1:
        raise ValueError(f"minimization steps are numbered from 1, got {i}")
    if len(grad_history) < i:
        raise HistoryTooShortError(
            f"need gradient history entries 0..{i - 1} ({i} total), got {len(grad_history)}"
        )
    if i == 1:
        return np.zeros_like(np.asarray(grad_history[0], dtype=float))
    smoothed = [space_convolve(grad_history[j], kernels) for j in range(i)]
    return time_convolve_discrete(smoothed, i - 1, tau, kernels)
