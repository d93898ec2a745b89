"""First-order Godunov finite-volume solver for scalar conservation laws.

Used both to generate the boundary/initial measurements and as the
entropy-solution reference the trained models are scored against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .pde import FluxModel, GreenshieldsFlux

Trace = Callable[[float], float]


@dataclass(frozen=True)
class GridSpec:
    length_L: float = 1.0
    time_T: float = 1.0
    nx: int = 200
    cfl: float = 0.9

    def __post_init__(self):
        if not (self.length_L > 0 and self.time_T > 0):
            raise ValueError("domain length and horizon must be positive")
        if self.nx < 2:
            raise ValueError("need at least two cells")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")

    @property
    def dx(self) -> float:
        return self.length_L / self.nx

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    def time_steps(self, max_speed: float) -> tuple[float, int]:
        """``(dt, nt)`` with ``nt * dt == T`` and ``dt <= cfl * dx / max_speed``."""
        nt = math.ceil(self.time_T / (self.cfl * self.dx / max_speed))
        return self.time_T / nt, nt


@dataclass(frozen=True)
class BoundaryTrace:
    """Densities imposed in the ghost cells left of x = 0 and right of x = L."""

    left: Trace
    right: Trace

    @classmethod
    def constant(cls, left: float, right: float) -> "BoundaryTrace":
        for v in (left, right):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"boundary density {v} outside [0, 1]")
        return cls(lambda t: left, lambda t: right)


@dataclass
class DensityField:
    """Cell averages, row ``k`` at time ``k * dt``; row 0 is the initial data."""

    grid: GridSpec
    values: np.ndarray
    v_f: float = 1.0

    @property
    def nt(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.grid.time_T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(T, X)`` node coordinates shaped like ``values``."""
        return np.meshgrid(self.times, self.grid.x_centers, indexing="ij")


def godunov_flux(u_l, u_r, m: FluxModel):
    """Exact Riemann interface flux for a concave flux.

    min f on [u_l, u_r] when u_l <= u_r, max f on [u_r, u_l] otherwise.
    Works elementwise on arrays.
    """
    u_l = np.asarray(u_l, dtype=np.float64)
    u_r = np.asarray(u_r, dtype=np.float64)
    if np.any((u_l < 0) | (u_l > 1) | (u_r < 0) | (u_r > 1)):
        raise ValueError("Godunov flux defined for densities in [0, 1]")
    fl, fr = m.flux(u_l), m.flux(u_r)
    us = m.sonic_point
    sonic = (u_r <= us) & (us <= u_l)
    out = np.where(u_l <= u_r, np.minimum(fl, fr),
                   np.where(sonic, m.flux(us), np.maximum(fl, fr)))
    return out[()] if out.ndim == 0 else out


def simulate(u0, bc: BoundaryTrace, grid: GridSpec, m: FluxModel | None = None) -> DensityField:
    """Explicit conservative Godunov update with Dirichlet ghost cells."""
    m = GreenshieldsFlux() if m is None else m
    u = np.array(u0, dtype=np.float64)
    if u.shape != (grid.nx,):
        raise ValueError(f"initial profile needs {grid.nx} cell values")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("initial densities must lie in [0, 1]")
    dt, nt = grid.time_steps(m.max_speed)
    ratio = dt / grid.dx
    if ratio * m.max_speed > grid.cfl * (1 + 1e-12):
        raise RuntimeError("CFL condition violated")
    values = np.empty((nt + 1, grid.nx))
    values[0] = u
    padded = np.empty(grid.nx + 2)
    for k in range(nt):
        t = k * dt
        padded[0], padded[-1] = bc.left(t), bc.right(t)
        padded[1:-1] = u
        F = godunov_flux(padded[:-1], padded[1:], m)
        u = u - ratio * (F[1:] - F[:-1])
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at step {k + 1}")
        values[k + 1] = u
    return DensityField(grid, values, getattr(m, "v_f", 1.0))


@dataclass
class Measurements:
    """Samples ``u(t, x)`` on the initial line and both road ends."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __len__(self) -> int:
        return self.u.shape[0]


def sample_measurements(field: DensityField, noise_sigma: float = 0.0, seed: int = 0) -> Measurements:
    """Initial row at every cell centre plus both boundary columns at every step.

    Boundary columns are reported at x = 0 and x = L (the detector
    locations) with the values of the outermost cells.
    """
    g = field.grid
    times = field.times
    t = np.concatenate([np.zeros(g.nx), times, times])
    x = np.concatenate([g.x_centers, np.zeros(times.size), np.full(times.size, g.length_L)])
    u = np.concatenate([field.values[0], field.values[:, 0], field.values[:, -1]])
    if noise_sigma > 0:
        u = u + np.random.default_rng(seed % 2**64).normal(0.0, noise_sigma, size=u.shape)
    return Measurements(t, x, u)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_field(field: DensityField, path: str | Path) -> None:
    g = field.grid
    lines = [f"{g.nx} {field.nt} {g.length_L!r} {g.time_T!r} {field.v_f!r}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in field.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path: str | Path, cfl: float = 0.9) -> DensityField:
    with open(path) as fh:
        nx, nt, L, T, v_f = fh.readline().split()
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (int(nt) + 1, int(nx)):
        raise ValueError(f"{path}: expected {int(nt) + 1}x{nx} values, got {values.shape}")
    return DensityField(GridSpec(float(L), float(T), int(nx), cfl), values, float(v_f))


def write_measurements(data: Measurements, path: str | Path) -> None:
    rows = np.column_stack([data.t, data.x, data.u])
    np.savetxt(path, rows, fmt="%.17g")


def read_measurements(path: str | Path) -> Measurements:
    rows = np.loadtxt(path, ndmin=2)
    return Measurements(rows[:, 0], rows[:, 1], rows[:, 2])
