"""Kinetic problem data: coefficient fields, initial and inflow data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .velocity_fem import NodalFunction, VelocityGrid


class PiecewiseConstant:
    """Piecewise-constant function of ``x``, constant in ``t``.

    ``values[i]`` holds on ``(breaks[i-1], breaks[i]]``: a breakpoint belongs
    to the piece on its left, i.e. ``value_0 for x <= breaks[0]``.
    """

    def __init__(self, breaks: Sequence[float], values: Sequence[float]):
        breaks = np.asarray(breaks, dtype=float).reshape(-1)
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != breaks.size + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if np.any(np.diff(breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breaks = breaks
        self.values = values

    def __call__(self, t, x):
        idx = np.searchsorted(self.breaks, x, side="left")
        out = self.values[idx]
        return float(out) if np.ndim(out) == 0 else out

    def __repr__(self):
        return f"PiecewiseConstant(breaks={self.breaks.tolist()}, values={self.values.tolist()})"


@dataclass(frozen=True)
class KineticProblem:
    """Data of the 1D Fokker-Planck problem on ``x_range x [0, t_end]``.

    Fields are plain callables accepting numpy arrays: ``sigma_a(t, x)``,
    ``T_field(t, x)``, ``Q_source(t, x, v)``, ``psi0(x, v)``, ``psi_a(t, v)``
    (used for ``v > 0`` at the left end) and ``psi_b(t, v)`` (``v < 0`` at
    the right end).  When ``delta_left`` is set, the left inflow is
    ``delta_left * delta(v - 1)`` and ``psi_a`` is ignored.  ``stationary``
    declares all fields time independent, letting solvers evaluate them once.
    """

    name: str
    x_range: tuple
    t_end: float
    sigma_a: Callable
    T_field: Callable
    Q_source: Callable
    psi0: Callable
    psi_a: Optional[Callable] = None
    psi_b: Optional[Callable] = None
    delta_left: Optional[float] = None
    stationary: bool = True
    # distinct (sigma, T) regions are cut at these x values; used by step-size control
    breakpoints: tuple = ()

    def __post_init__(self):
        a, b = self.x_range
        if not a < b:
            raise ValueError(f"empty spatial domain {self.x_range}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")

    @property
    def length(self) -> float:
        return self.x_range[1] - self.x_range[0]


@dataclass(frozen=True)
class SpaceGrid:
    a: float
    b: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 1 or not self.a < self.b:
            raise ValueError("invalid space grid")

    @property
    def h_x(self) -> float:
        return (self.b - self.a) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.a + self.h_x * (np.arange(self.n_cells) + 0.5)

    @property
    def edges(self) -> np.ndarray:
        return self.a + self.h_x * np.arange(self.n_cells + 1)

    def cell_of(self, x: float) -> int:
        """Index of the cell containing ``x`` (edges go to the right cell)."""
        j = int(np.floor((x - self.a) / self.h_x + 1e-12))
        return min(max(j, 0), self.n_cells - 1)


def space_grid(problem: KineticProblem, n_cells: int) -> SpaceGrid:
    a, b = problem.x_range
    return SpaceGrid(float(a), float(b), int(n_cells))


def _constant_field(c):
    def field(*args):
        return np.full(np.broadcast(*args).shape, c) if args else c

    return field


def sourcebeam() -> KineticProblem:
    """The SourceBeam benchmark: a beam entering at ``x = 0``, an interior
    source on ``[1, 1.5]`` and piecewise-constant absorption and scattering."""

    def source(t, x, v):
        x = np.asarray(x, dtype=float)
        inside = ((x >= 1.0) & (x <= 1.5)).astype(float)
        return np.broadcast_to(inside, np.broadcast(x, v).shape) if np.ndim(v) else inside

    return KineticProblem(
        name="sourcebeam",
        x_range=(0.0, 3.0),
        t_end=4.0,
        sigma_a=PiecewiseConstant([2.0], [1.0, 0.0]),
        T_field=PiecewiseConstant([1.0, 2.0], [0.0, 2.0, 10.0]),
        Q_source=source,
        psi0=_constant_field(1e-4),
        psi_a=None,
        psi_b=_constant_field(1e-4),
        delta_left=1.0,
        breakpoints=(1.0, 1.5, 2.0),
    )


def piecewise_problem(
    name: str,
    x_range: Sequence[float],
    t_end: float,
    sigma_breaks: Sequence[float],
    sigma_values: Sequence[float],
    T_breaks: Sequence[float],
    T_values: Sequence[float],
    Q_breaks: Sequence[float],
    Q_values: Sequence[float],
    psi0: float,
    psi_left: float | str,
    psi_right: float,
) -> KineticProblem:
    """Problem with piecewise-constant ``sigma_a``, ``T`` and isotropic ``Q``
    and constant initial/inflow data.

    ``psi_left`` is either a number (isotropic inflow on ``v > 0``) or the
    string ``"delta:<amplitude>"`` for a beam ``amplitude * delta(v - 1)``.
    """
    T = PiecewiseConstant(T_breaks, T_values)
    if np.any(T.values < 0):
        raise ValueError("transport coefficient T must be nonnegative")
    Q = PiecewiseConstant(Q_breaks, Q_values)

    def source(t, x, v):
        q = np.asarray(Q(t, x), dtype=float)
        return np.broadcast_to(q, np.broadcast(q, v).shape) if np.ndim(v) else q

    delta = None
    psi_a = None
    if isinstance(psi_left, str):
        kind, _, amp = psi_left.partition(":")
        if kind.strip() != "delta":
            raise ValueError(f"unknown left inflow {psi_left!r}")
        delta = float(amp) if amp else 1.0
    else:
        psi_a = _constant_field(float(psi_left))
    breaks = sorted(set(map(float, [*sigma_breaks, *T_breaks, *Q_breaks])))
    return KineticProblem(
        name=name,
        x_range=(float(x_range[0]), float(x_range[1])),
        t_end=float(t_end),
        sigma_a=PiecewiseConstant(sigma_breaks, sigma_values),
        T_field=T,
        Q_source=source,
        psi0=_constant_field(float(psi0)),
        psi_a=psi_a,
        psi_b=_constant_field(float(psi_right)),
        delta_left=delta,
        breakpoints=tuple(breaks),
    )


def evaluate_coefficients(problem: KineticProblem, t: float, x: float) -> tuple[float, float]:
    """Return ``(sigma_a, T)`` at a point of the closed space-time domain."""
    a, b = problem.x_range
    if not (0.0 <= t <= problem.t_end and a <= x <= b):
        raise ValueError(f"(t={t}, x={x}) lies outside the problem domain")
    return float(problem.sigma_a(t, x)), float(problem.T_field(t, x))


def discrete_delta(grid: VelocityGrid, amplitude: float = 1.0) -> NodalFunction:
    """Scaled endpoint hat at ``v = 1`` with exact zeroth moment ``amplitude``."""
    values = np.zeros(grid.n_nodes)
    values[-1] = amplitude * 2.0 / grid.h_v
    return NodalFunction(grid, values)
