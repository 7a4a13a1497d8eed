"""Upwind finite-volume solver for the reduced moment system

    p_t + A p_x + (sigma I + T/2 M^-1 S) p = M^-1 q,   A = M^-1 D,

with forward Euler time stepping and ghost cells holding the projected
incoming boundary data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .basis import ReducedOperators, VelocityBasis, incoming_boundary_moments, project_values
from .problem import KineticProblem, SpaceGrid

DEFAULT_CFL = 0.9


class SolverInstabilityError(RuntimeError):
    def __init__(self, t: float, detail: str = "non-finite state"):
        super().__init__(f"{detail} at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class MomentField:
    space_grid: SpaceGrid
    times: np.ndarray
    data: np.ndarray  # (n_times, m, n_cells)


@dataclass(frozen=True)
class DensityField:
    space_grid: SpaceGrid
    times: np.ndarray
    values: np.ndarray  # (n_times, n_cells)

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise KeyError(f"no stored density at t={t}")
        return self.values[idx[0]]


def upwind_flux(p_left: np.ndarray, p_right: np.ndarray, ops: ReducedOperators) -> np.ndarray:
    """Numerical flux A+ p_left + A- p_right; works row-wise on stacked states."""
    return p_left @ ops.A_plus.T + p_right @ ops.A_minus.T


def _coefficient_samples(problem: KineticProblem, n: int = 257):
    a, b = problem.x_range
    xs = np.concatenate([np.linspace(a, b, n), np.asarray(problem.breakpoints, dtype=float)])
    ts = [0.0] if problem.stationary else np.linspace(0.0, problem.t_end, 9)
    sig = np.concatenate([np.broadcast_to(problem.sigma_a(t, xs), xs.shape) for t in ts])
    T = np.concatenate([np.broadcast_to(problem.T_field(t, xs), xs.shape) for t in ts])
    return sig, T


def reaction_radius(ops: ReducedOperators, sigma, T) -> float:
    """Largest spectral radius of sigma I + T/2 M^-1 S over the given samples."""
    return float(np.max(np.abs(np.asarray(sigma) + 0.5 * np.asarray(T) * ops.stiffness_radius)))


def stable_dt(
    ops: ReducedOperators,
    problem: KineticProblem,
    h_x: float,
    cfl: float = DEFAULT_CFL,
) -> float:
    """Forward Euler step for upwind transport plus the unsplit reaction term.

    ``dt = cfl / (max|lambda(A)| / h_x + rho / 2)`` where ``rho`` bounds the
    reaction spectrum; each term alone reduces to the usual advective CFL
    condition and the ``2 / rho`` bound.
    """
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    speed = float(np.max(np.abs(ops.eig_vals)))
    rho = reaction_radius(ops, *_coefficient_samples(problem))
    rate = speed / h_x + 0.5 * rho
    return math.inf if rate == 0 else cfl / rate


@numba.njit(cache=True)
def _advance(p, A_plus, A_minus, region, R, source, ghost_l, ghost_r, h, dt, n_steps):
    """``n_steps`` forward Euler steps of the upwind scheme, in place on ``p``."""
    n, m = p.shape
    flux = np.empty((n + 1, m))
    rhs = np.empty(m)
    lam = dt / h
    for _ in range(n_steps):
        for i in range(n + 1):
            for k in range(m):
                acc = 0.0
                if i == 0:
                    for l in range(m):
                        acc += A_plus[k, l] * ghost_l[l] + A_minus[k, l] * p[0, l]
                elif i == n:
                    for l in range(m):
                        acc += A_plus[k, l] * p[n - 1, l] + A_minus[k, l] * ghost_r[l]
                else:
                    for l in range(m):
                        acc += A_plus[k, l] * p[i - 1, l] + A_minus[k, l] * p[i, l]
                flux[i, k] = acc
        for j in range(n):
            Rj = R[region[j]]
            for k in range(m):
                acc = source[j, k]
                for l in range(m):
                    acc -= Rj[k, l] * p[j, l]
                rhs[k] = acc
            for k in range(m):
                p[j, k] += dt * rhs[k] - lam * (flux[j + 1, k] - flux[j, k])
    return p


class _CellData:
    """Coefficients of the explicit update sampled on the space grid."""

    def __init__(self, problem, basis, ops, grid):
        self.problem = problem
        self.basis = basis
        self.ops = ops
        self.x = grid.centers
        self.MinvS = ops.solve_mass(ops.S)
        self.refresh(0.0)

    def refresh(self, t):
        problem, ops = self.problem, self.ops
        x = self.x
        sigma = np.broadcast_to(np.asarray(problem.sigma_a(t, x), dtype=float), x.shape)
        T = np.broadcast_to(np.asarray(problem.T_field(t, x), dtype=float), x.shape)
        # cells with equal coefficients share one reaction matrix
        uniq, inverse = np.unique(np.stack([sigma, T], axis=1), axis=0, return_inverse=True)
        self.region = np.ascontiguousarray(inverse.reshape(-1), dtype=np.int64)
        self.R = np.ascontiguousarray(
            [s * np.eye(ops.m) + 0.5 * tt * self.MinvS for s, tt in uniq]
        )
        q = np.broadcast_to(
            problem.Q_source(t, x[:, None], self.basis.grid.nodes[None, :]),
            (x.size, self.basis.grid.n_nodes),
        )
        self.source = np.ascontiguousarray(project_values(np.asarray(q, dtype=float), ops))
        self.ghost_l = incoming_boundary_moments(problem, self.basis, ops, t, "left")
        self.ghost_r = incoming_boundary_moments(problem, self.basis, ops, t, "right")

    def advance(self, p, h, dt, n_steps):
        ops = self.ops
        return _advance(
            p, ops.A_plus, ops.A_minus, self.region, self.R, self.source,
            self.ghost_l, self.ghost_r, h, dt, n_steps,
        )


def initial_moments(problem: KineticProblem, basis: VelocityBasis, ops: ReducedOperators, grid: SpaceGrid):
    x = grid.centers
    v = basis.grid.nodes
    psi0 = np.broadcast_to(problem.psi0(x[:, None], v[None, :]), (x.size, v.size))
    return project_values(np.asarray(psi0, dtype=float), ops)


def solve_moment_system(
    problem: KineticProblem,
    basis: VelocityBasis,
    ops: ReducedOperators,
    space_grid: SpaceGrid,
    output_times: Sequence[float],
    cfl: float = DEFAULT_CFL,
) -> MomentField:
    """Integrate the moment system and store the cell averages at ``output_times``.

    Each interval between consecutive output times is covered by equal steps
    no longer than ``stable_dt``.
    """
    times = np.asarray(output_times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > problem.t_end + 1e-12):
        raise ValueError("output times must be sorted and lie in [0, t_end]")
    dt_max = stable_dt(ops, problem, space_grid.h_x, cfl)
    cells = _CellData(problem, basis, ops, space_grid)
    p = np.ascontiguousarray(initial_moments(problem, basis, ops, space_grid))
    out = np.empty((times.size, ops.m, space_grid.n_cells))
    t = 0.0
    for k, t_out in enumerate(times):
        span = t_out - t
        if span > 0:
            n_steps = max(1, math.ceil(span / dt_max - 1e-9))
            dt = span / n_steps
            if problem.stationary:
                cells.advance(p, space_grid.h_x, dt, n_steps)
            else:
                for i in range(n_steps):
                    cells.refresh(t + i * dt)
                    cells.advance(p, space_grid.h_x, dt, 1)
            if not np.all(np.isfinite(p)):
                raise SolverInstabilityError(t_out)
            t = float(t_out)
        out[k] = p.T
    return MomentField(space_grid, times, out)


def spatial_density(field: MomentField, basis: VelocityBasis, ops: ReducedOperators) -> DensityField:
    """Velocity integral sum_i p_i (phi_i, 1)_v in every cell."""
    values = np.einsum("i,tij->tj", ops.zeroth, field.data)
    return DensityField(field.space_grid, field.times, values)


def write_density_csv(field: DensityField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "value"])
        for t, row in zip(field.times, field.values):
            for x, val in zip(field.space_grid.centers, row):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(val))])


def read_density_csv(path, space_grid: SpaceGrid) -> DensityField:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(rows[:, 0])
    values = rows[:, 2].reshape(times.size, space_grid.n_cells)
    return DensityField(space_grid, times, values)


def write_moments_csv(field: MomentField, path) -> None:
    m = field.data.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", *(f"p_{i + 1}" for i in range(m))])
        for t, block in zip(field.times, field.data):
            for j, x in enumerate(field.space_grid.centers):
                w.writerow([repr(float(t)), repr(float(x)), *(repr(float(v)) for v in block[:, j])])
