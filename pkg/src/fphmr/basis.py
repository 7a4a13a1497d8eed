"""Orthonormal velocity bases and the reduced moment-system operators."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from typing import Optional

import numpy as np
import scipy.linalg as spla
from numpy.polynomial import legendre as npleg

from .problem import KineticProblem, discrete_delta
from .velocity_fem import (
    FemOperators,
    NodalFunction,
    VelocityGrid,
    assemble_operators,
    make_grid,
)

GS_TOL = 1e-10
ORTHONORMALITY_TOL = 1e-10


class DegenerateBasisError(ValueError):
    """The basis mass matrix is numerically singular."""


@dataclass(frozen=True)
class VelocityBasis:
    """Ordered L2-orthonormal functions, stored row-wise in ``vectors``."""

    grid: VelocityGrid
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=float, ndmin=2)
        if vectors.shape[0] < 1 or vectors.shape[1] != self.grid.n_nodes:
            raise ValueError(f"bad basis shape {vectors.shape} for grid {self.grid.n_cells}")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def functions(self) -> list[NodalFunction]:
        return [NodalFunction(self.grid, row) for row in self.vectors]

    def gram(self) -> np.ndarray:
        mass = assemble_operators(self.grid).mass
        return self.vectors @ (mass @ self.vectors.T)

    def is_orthonormal(self, tol: float = ORTHONORMALITY_TOL) -> bool:
        return bool(np.max(np.abs(self.gram() - np.eye(self.m))) <= tol)

    def prefix(self, m: int) -> "VelocityBasis":
        return VelocityBasis(self.grid, self.vectors[:m])

    def rotated(self, q: np.ndarray) -> "VelocityBasis":
        """Basis whose functions are ``q @ functions`` (``q`` orthogonal)."""
        return VelocityBasis(self.grid, q @ self.vectors)


@dataclass(frozen=True)
class ReducedOperators:
    M: np.ndarray
    D: np.ndarray
    S: np.ndarray
    A: np.ndarray
    eig_vals: np.ndarray
    eig_R: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    # Galerkin map nodal values -> raw moments (phi_i, f)_v, shape (m, n_nodes)
    moment_map: np.ndarray
    # (phi_i, 1)_v, used to evaluate the spatial density
    zeroth: np.ndarray
    # largest eigenvalue of the generalized problem S x = lambda M x
    stiffness_radius: float

    @property
    def m(self) -> int:
        return self.M.shape[0]

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.M, rhs)


def gram_schmidt_extend(
    basis: Optional[VelocityBasis],
    candidate: NodalFunction,
    tol: float = GS_TOL,
) -> Optional[VelocityBasis]:
    """Append the orthonormalized ``candidate`` to ``basis``.

    Modified Gram-Schmidt with one reorthogonalization pass in the L2 inner
    product.  Returns ``None`` when the candidate is (numerically) in the span
    of ``basis``, i.e. when the dimension would not grow.
    """
    grid = candidate.grid
    if basis is not None and basis.grid != grid:
        raise ValueError("candidate and basis live on different velocity grids")
    mass = assemble_operators(grid).mass
    r = np.array(candidate.values, dtype=float)
    norm0 = np.sqrt(max(r @ (mass @ r), 0.0))
    if norm0 == 0.0:
        return None
    if basis is not None:
        for _ in range(2):
            for phi in basis.vectors:
                r -= (phi @ (mass @ r)) * phi
    norm = np.sqrt(max(r @ (mass @ r), 0.0))
    if norm <= tol * norm0:
        return None
    r /= norm
    rows = r[None, :] if basis is None else np.vstack([basis.vectors, r])
    return VelocityBasis(grid, rows)


def orthonormalize(candidates, grid: VelocityGrid, tol: float = GS_TOL) -> VelocityBasis:
    """Orthonormalize candidate nodal vectors in order; rejections are errors."""
    basis = None
    for i, c in enumerate(candidates):
        f = c if isinstance(c, NodalFunction) else NodalFunction(grid, c)
        extended = gram_schmidt_extend(basis, f, tol)
        if extended is None:
            raise DegenerateBasisError(f"candidate {i} is linearly dependent on its predecessors")
        basis = extended
    if basis is None:
        raise ValueError("no candidates given")
    return basis


def legendre_basis(m: int, grid: VelocityGrid) -> VelocityBasis:
    """First ``m`` normalized Legendre polynomials, interpolated on ``grid``
    and re-orthonormalized in the discrete L2 product."""
    if m < 1:
        raise ValueError("m must be positive")
    rows = []
    for i in range(m):
        coef = np.zeros(i + 1)
        coef[i] = np.sqrt((2 * i + 1) / 2.0)
        rows.append(npleg.legval(grid.nodes, coef))
    try:
        return orthonormalize(rows, grid)
    except DegenerateBasisError as err:
        raise DegenerateBasisError(
            f"{m} Legendre polynomials are not resolved by {grid.n_cells} velocity cells"
        ) from err


def reduced_operators(basis: VelocityBasis, fem: Optional[FemOperators] = None) -> ReducedOperators:
    """Galerkin matrices M, D, S of ``basis`` and the upwind splitting of M^-1 D.

    The eigenproblem D x = lambda M x is symmetric-definite, so A = M^-1 D has
    a real spectrum; with M-orthonormal eigenvectors R, A = R diag(lambda) R^T M.
    """
    fem = fem or assemble_operators(basis.grid)
    if fem.grid != basis.grid:
        raise ValueError("FEM operators and basis live on different grids")
    phi = basis.vectors
    moment_map = np.asarray((fem.mass @ phi.T).T)
    M = _sym(phi @ moment_map.T)
    D = _sym(phi @ (fem.transport @ phi.T))
    S = _sym(phi @ (fem.stiffness_lb @ phi.T))
    if np.linalg.cond(M) > 1e12:
        raise DegenerateBasisError("basis mass matrix is numerically singular")
    lam, R = spla.eigh(D, M)
    order = np.argsort(lam, kind="stable")
    lam, R = lam[order], R[:, order]
    left = R.T @ M  # R^-1
    A = R @ (lam[:, None] * left)
    A_plus = R @ (np.maximum(lam, 0.0)[:, None] * left)
    A_minus = R @ (np.minimum(lam, 0.0)[:, None] * left)
    s_eigs = spla.eigh(S, M, eigvals_only=True)
    return ReducedOperators(
        M=M,
        D=D,
        S=S,
        A=A,
        eig_vals=lam,
        eig_R=R,
        A_plus=A_plus,
        A_minus=A_minus,
        moment_map=moment_map,
        zeroth=moment_map.sum(axis=1),
        stiffness_radius=float(max(s_eigs.max(), 0.0)),
    )


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def project_function(f: NodalFunction, basis: VelocityBasis, ops: ReducedOperators) -> np.ndarray:
    """Moment vector M^-1 ((f, phi_i)_v)_i."""
    if f.grid != basis.grid:
        raise ValueError("function and basis live on different velocity grids")
    return ops.solve_mass(ops.moment_map @ f.values)


def project_values(values: np.ndarray, ops: ReducedOperators) -> np.ndarray:
    """Vectorized projection of nodal rows ``values[..., n_nodes]``."""
    raw = values @ ops.moment_map.T
    return np.linalg.solve(ops.M, raw.reshape(-1, ops.m).T).T.reshape(raw.shape)


def incoming_boundary_function(
    problem: KineticProblem, grid: VelocityGrid, t: float, side: str
) -> NodalFunction:
    """Inflow data on the whole velocity interval, zero on outgoing velocities.

    The node ``v = 0`` belongs to the zero branch on the left and to the
    inflow branch on the right.
    """
    v = grid.nodes
    if side == "left":
        if problem.delta_left is not None:
            return discrete_delta(grid, problem.delta_left)
        if problem.psi_a is None:
            return NodalFunction(grid, np.zeros_like(v))
        vals = np.where(v > 0, np.broadcast_to(problem.psi_a(t, v), v.shape), 0.0)
    elif side == "right":
        if problem.psi_b is None:
            return NodalFunction(grid, np.zeros_like(v))
        vals = np.where(v <= 0, np.broadcast_to(problem.psi_b(t, v), v.shape), 0.0)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return NodalFunction(grid, vals)


def incoming_boundary_moments(
    problem: KineticProblem,
    basis: VelocityBasis,
    ops: ReducedOperators,
    t: float,
    side: str,
) -> np.ndarray:
    if not 0.0 <= t <= problem.t_end:
        raise ValueError(f"t={t} outside [0, {problem.t_end}]")
    f = incoming_boundary_function(problem, basis.grid, t, side)
    return project_function(f, basis, ops)


def save_basis(basis: VelocityBasis, path: str | PathLike) -> None:
    """Plain-text basis file: header ``n_cells m``, then one row per function."""
    save_rows(basis.vectors, basis.grid.n_cells, path)


def save_rows(rows: np.ndarray, n_cells: int, path: str | PathLike) -> None:
    rows = np.atleast_2d(rows)
    with open(path, "w") as fh:
        fh.write(f"{n_cells} {rows.shape[0]}\n")
        for row in rows:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_rows(path: str | PathLike) -> tuple[int, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().split()
        n_cells, m = int(header[0]), int(header[1])
        rows = np.array([[float(x) for x in line.split()] for line in fh if line.strip()])
    rows = rows.reshape(m, n_cells + 1) if m else np.zeros((0, n_cells + 1))
    return n_cells, rows


def load_basis(path: str | PathLike) -> VelocityBasis:
    n_cells, rows = load_rows(path)
    return VelocityBasis(make_grid(n_cells), rows)
