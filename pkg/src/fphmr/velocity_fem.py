"""P1 finite elements on the velocity interval (-1, 1).

All operator matrices are tridiagonal and kept as ``scipy.sparse`` CSR
matrices; ``banded`` converts one to the layout ``solve_banded`` expects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

# 3-point Gauss-Legendre rule on [0, 1], exact up to degree 5.
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


@dataclass(frozen=True)
class VelocityGrid:
    n_cells: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def h_v(self) -> float:
        return 2.0 / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    def __eq__(self, other):
        return isinstance(other, VelocityGrid) and other.n_cells == self.n_cells

    def __hash__(self):
        return hash(("VelocityGrid", self.n_cells))


def make_grid(n_cells: int) -> VelocityGrid:
    """Uniform grid with ``n_cells`` cells on [-1, 1]."""
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"velocity grid needs n_cells >= 2, got {n_cells}")
    n_cells = int(n_cells)
    nodes = -1.0 + (2.0 / n_cells) * np.arange(n_cells + 1)
    nodes[-1] = 1.0
    nodes.setflags(write=False)
    return VelocityGrid(n_cells, nodes)


@dataclass(frozen=True)
class NodalFunction:
    """Continuous piecewise-linear function given by its nodal values."""

    grid: VelocityGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"expected {self.grid.n_nodes} nodal values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("nodal values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return NodalFunction(self.grid, self.values + other.values)

    def __mul__(self, scalar):
        return NodalFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class FemOperators:
    grid: VelocityGrid
    mass: sp.csr_matrix
    transport: sp.csr_matrix
    stiffness_lb: sp.csr_matrix


def _check_same_grid(g1: VelocityGrid, g2: VelocityGrid):
    if g1 != g2:
        raise ValueError(
            f"velocity grids differ: {g1.n_cells} vs {g2.n_cells} cells"
        )


def _tridiag(diag, off_lower, off_upper) -> sp.csr_matrix:
    return sp.diags([off_lower, diag, off_upper], [-1, 0, 1], format="csr")


@lru_cache(maxsize=32)
def assemble_operators(grid: VelocityGrid) -> FemOperators:
    """Assemble the mass, ``v``-weighted mass and Laplace-Beltrami stiffness.

    Integrals are evaluated cell by cell with 3-point Gauss quadrature,
    which is exact for the polynomial integrands involved.
    """
    h = grid.h_v
    left = grid.nodes[:-1]
    # quadrature points, shape (n_cells, 3)
    v = left[:, None] + h * _GAUSS_X[None, :]
    w = h * _GAUSS_W[None, :]
    phi_l = 1.0 - _GAUSS_X[None, :]
    phi_r = _GAUSS_X[None, :]

    def local(weight):
        ll = np.sum(w * weight * phi_l * phi_l, axis=1)
        lr = np.sum(w * weight * phi_l * phi_r, axis=1)
        rr = np.sum(w * weight * phi_r * phi_r, axis=1)
        return ll, lr, rr

    def global_(ll, lr, rr):
        diag = np.zeros(grid.n_nodes)
        diag[:-1] += ll
        diag[1:] += rr
        return _tridiag(diag, lr, lr)

    mass = global_(*local(np.ones_like(v)))
    transport = global_(*local(v))
    # derivatives of the hats are -1/h and +1/h on each cell
    k = np.sum(w * (1.0 - v**2), axis=1) / h**2
    stiffness = global_(k, -k, k)
    return FemOperators(grid, mass, transport, stiffness)


def banded(matrix: sp.spmatrix) -> np.ndarray:
    """Return a tridiagonal matrix in ``scipy.linalg.solve_banded`` layout."""
    n = matrix.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = matrix.diagonal(1)
    ab[1] = matrix.diagonal(0)
    ab[2, :-1] = matrix.diagonal(-1)
    return ab


def l2_inner(f: NodalFunction, g: NodalFunction) -> float:
    """L2 inner product over (-1, 1) of two nodal functions."""
    _check_same_grid(f.grid, g.grid)
    fem = assemble_operators(f.grid)
    return float(f.values @ (fem.mass @ g.values))


def interpolate(f: Callable[[np.ndarray], np.ndarray], grid: VelocityGrid) -> NodalFunction:
    """Nodal interpolant of ``f``; ``f`` is called once on the node array."""
    values = np.broadcast_to(np.asarray(f(grid.nodes), dtype=float), grid.nodes.shape)
    if not np.all(np.isfinite(values)):
        raise ValueError("function is not finite at every velocity node")
    return NodalFunction(grid, values.copy())


def constant(c: float, grid: VelocityGrid) -> NodalFunction:
    return NodalFunction(grid, np.full(grid.n_nodes, float(c)))
