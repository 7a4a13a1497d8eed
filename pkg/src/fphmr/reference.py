"""Full (t, x, v) reference solver.

Upwind finite volumes in ``x`` (one wind per velocity node) and a
conservative three-point flux form of d/dv((1 - v^2) d/dv) on the velocity
nodes, whose end nodes carry half weight.  Time stepping is IMEX Euler:
transport and source explicit, velocity diffusion and absorption implicit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as spla

from .moments import DensityField, SolverInstabilityError
from .problem import KineticProblem, SpaceGrid, discrete_delta, space_grid
from .velocity_fem import NodalFunction, VelocityGrid, make_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FullSolution:
    space_grid: SpaceGrid
    velocity_grid: VelocityGrid
    times: np.ndarray
    data: np.ndarray  # (n_times, n_x, n_v + 1)

    def index_of(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise KeyError(f"reference solution has no stored time t={t}")
        return int(idx[0])


def velocity_weights(grid: VelocityGrid) -> np.ndarray:
    """Trapezoid weights of the velocity nodes."""
    w = np.full(grid.n_nodes, grid.h_v)
    w[0] = w[-1] = 0.5 * grid.h_v
    return w


def lb_operator_bands(grid: VelocityGrid) -> np.ndarray:
    """Bands (upper, diag, lower) of the discrete Laplace-Beltrami operator L,
    (L psi)_k = (F_{k+1/2} - F_{k-1/2}) / w_k with zero flux through v = +-1."""
    h = grid.h_v
    mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    c = (1.0 - mid**2) / h
    w = velocity_weights(grid)
    ab = np.zeros((3, grid.n_nodes))
    ab[0, 1:] = c / w[:-1]
    ab[2, :-1] = c / w[1:]
    diag = np.zeros(grid.n_nodes)
    diag[:-1] -= c
    diag[1:] -= c
    ab[1] = diag / w
    return ab


def _inflow(problem: KineticProblem, vgrid: VelocityGrid, t: float):
    v = vgrid.nodes
    if problem.delta_left is not None:
        left = discrete_delta(vgrid, problem.delta_left).values
    elif problem.psi_a is not None:
        left = np.broadcast_to(problem.psi_a(t, v), v.shape).astype(float)
    else:
        left = np.zeros_like(v)
    right = (
        np.broadcast_to(problem.psi_b(t, v), v.shape).astype(float)
        if problem.psi_b is not None
        else np.zeros_like(v)
    )
    return np.where(v > 0, left, 0.0), np.where(v < 0, right, 0.0)


def solve_reference(
    problem: KineticProblem,
    n_x: int,
    n_v: int,
    output_times: Sequence[float],
    cfl: float = 0.9,
) -> FullSolution:
    """Solve the kinetic problem on ``n_x`` cells times ``n_v`` velocity cells."""
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    xg = space_grid(problem, n_x)
    vg = make_grid(n_v)
    times = np.asarray(output_times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > problem.t_end + 1e-12):
        raise ValueError("output times must be sorted and lie in [0, t_end]")
    x, v, h = xg.centers, vg.nodes, xg.h_x
    pos, neg = v > 0, v < 0
    lb = lb_operator_bands(vg)
    dt_max = cfl * h / float(np.max(np.abs(v)))

    psi = np.array(np.broadcast_to(problem.psi0(x[:, None], v[None, :]), (n_x, vg.n_nodes)), dtype=float)
    out = np.empty((times.size, n_x, vg.n_nodes))

    state = {}

    def refresh(t):
        sigma = np.broadcast_to(np.asarray(problem.sigma_a(t, x), dtype=float), x.shape)
        T = np.broadcast_to(np.asarray(problem.T_field(t, x), dtype=float), x.shape)
        state["q"] = np.array(
            np.broadcast_to(problem.Q_source(t, x[:, None], v[None, :]), psi.shape), dtype=float
        )
        state["inflow"] = _inflow(problem, vg, t)
        keys = np.stack([sigma, T], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        state["regions"] = [(np.flatnonzero(inverse.reshape(-1) == r), s, tt) for r, (s, tt) in enumerate(uniq)]

    refresh(0.0)
    factor_cache = {}

    def implicit(rhs, dt):
        for idx, s, T in state["regions"]:
            if T == 0.0:
                rhs[idx] /= 1.0 + dt * s
                continue
            key = (dt, s, T)
            ab = factor_cache.get(key)
            if ab is None:
                ab = -dt * 0.5 * T * lb
                ab[1] += 1.0 + dt * s
                if len(factor_cache) > 32:
                    factor_cache.clear()
                factor_cache[key] = ab
            rhs[idx] = spla.solve_banded((1, 1), ab, rhs[idx].T, check_finite=False).T
        return rhs

    def step(psi, t, dt):
        if not problem.stationary:
            refresh(t)
        left, right = state["inflow"]
        lam = dt / h
        new = psi + dt * state["q"]
        # v > 0: difference with the left neighbour, ghost = left inflow
        vp = v[pos]
        up = psi[:, pos]
        prev = np.vstack([left[pos][None, :], up[:-1]])
        new[:, pos] -= lam * vp * (up - prev)
        vn = v[neg]
        un = psi[:, neg]
        nxt = np.vstack([un[1:], right[neg][None, :]])
        new[:, neg] -= lam * vn * (nxt - un)
        return implicit(new, dt)

    t = 0.0
    for k, t_out in enumerate(times):
        span = t_out - t
        if span > 0:
            n_steps = max(1, math.ceil(span / dt_max - 1e-9))
            dt = span / n_steps
            for i in range(n_steps):
                psi = step(psi, t + i * dt, dt)
            if not np.all(np.isfinite(psi)):
                raise SolverInstabilityError(t_out)
            t = float(t_out)
        lo = psi.min()
        if lo < -1e-6 * max(psi.max(), 0.0):
            log.warning("reference solution undershoots to %.3g at t=%g", lo, t)
        out[k] = psi
    return FullSolution(xg, vg, times, out)


def density_of_full(sol: FullSolution) -> DensityField:
    """Trapezoid velocity integral in every cell and stored time."""
    values = sol.data @ velocity_weights(sol.velocity_grid)
    return DensityField(sol.space_grid, sol.times, values)


def truth_points(x_range, t_end: float, n_x_points: int = 12, n_t_points: int = 16):
    """Sampling points of the truth snapshots: cell centers of an
    ``n_x_points`` partition in space, ``j t_end / n_t_points`` in time."""
    a, b = x_range
    xs = a + (b - a) * (np.arange(n_x_points) + 0.5) / n_x_points
    ts = t_end * np.arange(1, n_t_points + 1) / n_t_points
    return xs, ts


def truth_snapshots(
    sol: FullSolution,
    n_x_points: int = 12,
    n_t_points: int = 16,
    t_end: float | None = None,
) -> list[NodalFunction]:
    """Velocity slices of ``sol`` on the truth grid, ordered time-major.

    ``t_end`` defaults to the last stored time.
    """
    grid = sol.space_grid
    t_end = float(sol.times[-1]) if t_end is None else t_end
    xs, ts = truth_points((grid.a, grid.b), t_end, n_x_points, n_t_points)
    snaps = []
    for t in ts:
        k = sol.index_of(t)
        for xi in xs:
            snaps.append(NodalFunction(sol.velocity_grid, sol.data[k, grid.cell_of(xi)]))
    return snaps
