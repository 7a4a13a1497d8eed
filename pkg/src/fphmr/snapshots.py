"""Snapshots from the parametrized elliptic problem in the velocity variable.

For a parameter ``mu`` (quadrature points in space-time with values of an
unknown profile ``P`` and its derivatives there, plus two boundary values)
the snapshot ``phi`` solves, for all test functions ``w`` vanishing at +-1,

    a ((1 - v^2) phi', w') + b (v phi, w) + c (phi, w) = (Q_hat, w),

with ``phi(-1) = phi_l`` and ``phi(1) = phi_r``, on the P1 space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as spla

from .problem import KineticProblem
from .velocity_fem import FemOperators, NodalFunction, VelocityGrid, assemble_operators, banded

log = logging.getLogger(__name__)

MAX_REDRAWS = 1000
MIN_DIFFUSION = 1e-12


class SnapshotSolveError(RuntimeError):
    def __init__(self, message, mu=None):
        super().__init__(message if mu is None else f"{message} (mu={mu})")
        self.mu = mu


@dataclass(frozen=True)
class ParameterPoint:
    quad_points: tuple  # ((t, x), ...)
    weights: tuple
    P_vals: tuple
    dxP_vals: tuple
    dtP_vals: tuple
    phi_l: float
    phi_r: float

    def __post_init__(self):
        n = len(self.quad_points)
        lens = {len(self.weights), len(self.P_vals), len(self.dxP_vals), len(self.dtP_vals)}
        if n < 1 or lens != {n}:
            raise ValueError("parameter lists must all have the same positive length")
        if any(w <= 0 for w in self.weights):
            raise ValueError("quadrature weights must be positive")

    def scaled_weights(self, s: float) -> "ParameterPoint":
        return replace(self, weights=tuple(s * w for w in self.weights))


@dataclass(frozen=True)
class ParameterBox:
    """Admissible ranges for one-or-more-point parameter vectors."""

    t: tuple = (0.0, 4.0)
    x: tuple = (1.0, 3.0)
    P: tuple = (0.01, 1.2)
    dxP: tuple = (-5.4, 0.9)
    dtP: tuple = (0.0, 5.0)
    boundary: tuple = (0.0, 1.0)
    n_quad: int = 1

    def __post_init__(self):
        for name in ("t", "x", "P", "dxP", "dtP", "boundary"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty interval for {name}: {(lo, hi)}")
        if self.n_quad < 1:
            raise ValueError("need at least one quadrature point")

    def check_domain(self, problem: KineticProblem):
        a, b = problem.x_range
        if self.t[0] < 0 or self.t[1] > problem.t_end or self.x[0] < a or self.x[1] > b:
            raise ValueError("parameter box is not contained in the problem domain")


@dataclass(frozen=True)
class PdeCoefficients:
    a_mu: float
    b_mu: float
    c_mu: float
    q_hat: NodalFunction


def coefficients(mu: ParameterPoint, problem: KineticProblem, grid: VelocityGrid) -> PdeCoefficients:
    """Evaluate a(mu), b(mu), c(mu) and the reduced source on ``grid``."""
    a = b = c = 0.0
    q_hat = np.zeros(grid.n_nodes)
    for (t, x), w, P, dxP, dtP in zip(
        mu.quad_points, mu.weights, mu.P_vals, mu.dxP_vals, mu.dtP_vals
    ):
        T = float(problem.T_field(t, x))
        sigma = float(problem.sigma_a(t, x))
        a += w * 0.5 * T * P * P
        b += w * dxP * P
        c += w * (dtP * P + sigma * P * P)
        q_hat += w * P * np.broadcast_to(problem.Q_source(t, x, grid.nodes), grid.nodes.shape)
    return PdeCoefficients(a, b, c, NodalFunction(grid, q_hat))


def solve_snapshot(
    coeffs: PdeCoefficients,
    phi_l: float,
    phi_r: float,
    grid: VelocityGrid,
    fem: FemOperators | None = None,
    mu: ParameterPoint | None = None,
) -> NodalFunction:
    """Galerkin solution with Dirichlet data imposed through the linear lifting."""
    if not coeffs.a_mu > 0:
        raise SnapshotSolveError("degenerate diffusion: a(mu) <= 0", mu)
    fem = fem or assemble_operators(grid)
    # dividing by a(mu) removes the common weight scale before any rounding
    # enters the solve, so rescaled weights give the same snapshot
    a = coeffs.a_mu
    K = fem.stiffness_lb + (coeffs.b_mu / a) * fem.transport + (coeffs.c_mu / a) * fem.mass
    rhs = fem.mass @ (coeffs.q_hat.values / a)
    lift = 0.5 * phi_l * (1.0 - grid.nodes) + 0.5 * phi_r * (1.0 + grid.nodes)
    rhs = rhs - K @ lift
    ab = banded(K)[:, 1:-1]
    ab[0, 0] = 0.0
    ab[2, -1] = 0.0
    try:
        interior = spla.solve_banded((1, 1), ab, rhs[1:-1], check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SnapshotSolveError(f"singular snapshot system: {err}", mu) from err
    if not np.all(np.isfinite(interior)):
        raise SnapshotSolveError("non-finite snapshot", mu)
    values = lift.copy()
    values[1:-1] += interior
    values[0], values[-1] = phi_l, phi_r
    return NodalFunction(grid, values)


def sample_parameters(
    box: ParameterBox,
    n: int,
    seed: int,
    problem: KineticProblem,
) -> list[ParameterPoint]:
    """Draw ``n`` i.i.d. uniform parameter points with unit quadrature weights.

    Uses numpy's PCG64 bit generator seeded with ``seed``.  Draws with a
    vanishing diffusion coefficient are redrawn.
    """
    if n < 1:
        raise ValueError("n must be positive")
    box.check_domain(problem)
    rng = np.random.Generator(np.random.PCG64(seed))
    q = box.n_quad
    points = []
    redraws = 0
    while len(points) < n:
        t = rng.uniform(*box.t, size=q)
        x = rng.uniform(*box.x, size=q)
        P = rng.uniform(*box.P, size=q)
        dxP = rng.uniform(*box.dxP, size=q)
        dtP = rng.uniform(*box.dtP, size=q)
        phi_l, phi_r = rng.uniform(*box.boundary, size=2)
        mu = ParameterPoint(
            quad_points=tuple((float(ti), float(xi)) for ti, xi in zip(t, x)),
            weights=(1.0,) * q,
            P_vals=tuple(map(float, P)),
            dxP_vals=tuple(map(float, dxP)),
            dtP_vals=tuple(map(float, dtP)),
            phi_l=float(phi_l),
            phi_r=float(phi_r),
        )
        a = sum(0.5 * float(problem.T_field(ti, xi)) * Pi * Pi for (ti, xi), Pi in zip(mu.quad_points, mu.P_vals))
        if a <= MIN_DIFFUSION:
            redraws += 1
            if redraws > MAX_REDRAWS:
                raise ValueError("parameter box yields a(mu) = 0 too often; restrict it")
            continue
        points.append(mu)
    if redraws:
        log.info("redrew %d parameter points with a(mu) <= %g", redraws, MIN_DIFFUSION)
    return points


def generate_snapshot_set(
    box: ParameterBox,
    n: int,
    seed: int,
    problem: KineticProblem,
    grid: VelocityGrid,
    max_failure_rate: float = 0.01,
) -> list[NodalFunction]:
    """Sample parameters and solve for their snapshots, in sampling order."""
    fem = assemble_operators(grid)
    snapshots = []
    failed = 0
    for mu in sample_parameters(box, n, seed, problem):
        try:
            snapshots.append(solve_snapshot(coefficients(mu, problem, grid), mu.phi_l, mu.phi_r, grid, fem, mu))
        except SnapshotSolveError as err:
            failed += 1
            log.warning("dropping snapshot: %s", err)
    if failed > max_failure_rate * n:
        raise SnapshotSolveError(f"{failed} of {n} snapshot solves failed")
    return snapshots
