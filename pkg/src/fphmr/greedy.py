"""Greedy selection of a problem-adapted velocity basis and error studies."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import (
    GS_TOL,
    DegenerateBasisError,
    VelocityBasis,
    gram_schmidt_extend,
    legendre_basis,
    reduced_operators,
)
from .moments import (
    DEFAULT_CFL,
    DensityField,
    SolverInstabilityError,
    solve_moment_system,
    spatial_density,
)
from .problem import KineticProblem, SpaceGrid
from .velocity_fem import NodalFunction

log = logging.getLogger(__name__)


@dataclass
class GreedyReport:
    bases: list = field(default_factory=list)  # VelocityBasis for m = 1..
    chosen_indices: list = field(default_factory=list)
    error_table: list = field(default_factory=list)
    # all candidate errors per level; nan marks a Gram-Schmidt rejection
    candidate_errors: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    @property
    def m_reached(self) -> int:
        return len(self.bases)


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)  # (method, h, m, error)

    def add(self, method: str, h: float, m: int, error: float):
        if not error >= 0:
            raise ValueError(f"invalid error value {error}")
        self.rows.append((method, float(h), int(m), float(error)))

    def errors(self, method: str, h: float) -> dict:
        return {m: e for meth, hh, m, e in self.rows if meth == method and math.isclose(hh, h)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "h", "m", "error"])
            for method, h, m, e in self.rows:
                w.writerow([method, repr(h), m, repr(e)])

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        report = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["method", "h", "m", "error"]:
                raise ValueError(f"{path}: expected header method,h,m,error")
            for row in reader:
                report.add(row["method"], float(row["h"]), int(row["m"]), float(row["error"]))
        return report


def coarsen(values: np.ndarray, n_coarse: int) -> np.ndarray:
    """Average fine cells onto ``n_coarse`` cells along the last axis."""
    n_fine = values.shape[-1]
    if n_fine % n_coarse:
        raise ValueError(f"{n_coarse} cells do not partition a grid of {n_fine} cells")
    return values.reshape(*values.shape[:-1], n_coarse, n_fine // n_coarse).mean(axis=-1)


def relative_l1_error(
    test: DensityField,
    reference: DensityField,
    times: Optional[Sequence[float]] = None,
) -> float:
    """Space-time relative L1 distance of two densities.

    The reference is averaged onto the (coarser or equal) test grid.  By
    default all positive times stored in ``test`` are compared.
    """
    tg, rg = test.space_grid, reference.space_grid
    if not (math.isclose(tg.a, rg.a) and math.isclose(tg.b, rg.b)):
        raise ValueError("densities live on different spatial domains")
    if times is None:
        times = [t for t in test.times if t > 0]
    num = den = 0.0
    for t in times:
        r = coarsen(reference.at(t), tg.n_cells)
        num += np.abs(test.at(t) - r).sum()
        den += np.abs(r).sum()
    if den == 0:
        raise ValueError("reference density has zero norm")
    # the common factor h_x cancels
    return float(num / den)


def comparison_times(problem: KineticProblem, n: int = 16) -> np.ndarray:
    return problem.t_end * np.arange(1, n + 1) / n


def basis_error(
    basis: VelocityBasis,
    problem: KineticProblem,
    space_grid: SpaceGrid,
    reference: DensityField,
    times: Sequence[float],
    cfl: float = DEFAULT_CFL,
) -> float:
    """Relative L1 error of the moment model built on ``basis``; ``inf`` if
    the basis is degenerate or the solve blows up."""
    try:
        ops = reduced_operators(basis)
        field_ = solve_moment_system(problem, basis, ops, space_grid, times, cfl)
    except (DegenerateBasisError, SolverInstabilityError) as err:
        log.debug("candidate rejected: %s", err)
        return math.inf
    err = relative_l1_error(spatial_density(field_, basis, ops), reference, times)
    return err if math.isfinite(err) else math.inf


# module-level context so worker processes receive it once
_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _candidate_error(vectors):
    c = _CTX
    basis = VelocityBasis(c["grid"], vectors)
    return basis_error(basis, c["problem"], c["space_grid"], c["reference"], c["times"], c["cfl"])


def greedy_basis_generation(
    snapshots: Sequence[NodalFunction],
    problem: KineticProblem,
    space_grid: SpaceGrid,
    m_max: int,
    reference_density: DensityField,
    gs_tol: float = GS_TOL,
    cfl: float = DEFAULT_CFL,
    times: Optional[Sequence[float]] = None,
    workers: int = 1,
) -> GreedyReport:
    """Extend an empty basis one snapshot at a time, always keeping the
    extension whose moment model is closest to the reference density.

    Ties go to the lowest snapshot index.  Stops early once every snapshot
    lies in the span of the current basis.
    """
    if m_max < 1:
        raise ValueError("m_max must be positive")
    if not snapshots:
        raise ValueError("empty snapshot set")
    grid = snapshots[0].grid
    if any(s.grid != grid for s in snapshots):
        raise ValueError("snapshots live on different velocity grids")
    times = comparison_times(problem) if times is None else np.asarray(times, dtype=float)
    ctx = dict(grid=grid, problem=problem, space_grid=space_grid, reference=reference_density, times=times, cfl=cfl)
    report = GreedyReport()
    basis = None
    pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) if workers > 1 else None
    if pool is None:
        _init_worker(ctx)
    try:
        for m in range(1, m_max + 1):
            t0 = time.perf_counter()
            extensions = [gram_schmidt_extend(basis, s, gs_tol) for s in snapshots]
            accepted = [i for i, e in enumerate(extensions) if e is not None]
            if not accepted:
                log.info("greedy: snapshot span exhausted at m=%d", m)
                break
            vecs = [extensions[i].vectors for i in accepted]
            if pool is None:
                errs = [_candidate_error(v) for v in vecs]
            else:
                errs = list(pool.map(_candidate_error, vecs, chunksize=max(1, len(vecs) // (4 * workers))))
            level = np.full(len(snapshots), np.nan)
            level[accepted] = errs
            if not np.any(np.isfinite(level)):
                raise SolverInstabilityError(problem.t_end, f"every candidate basis failed at m={m}")
            best = int(np.nanargmin(level))  # first minimum: lowest index wins ties
            basis = extensions[best]
            report.bases.append(basis)
            report.chosen_indices.append(best)
            report.error_table.append(float(level[best]))
            report.candidate_errors.append(level)
            report.timings.append(time.perf_counter() - t0)
            log.info("greedy m=%d: snapshot %d, error %.4g (%.1fs)", m, best, level[best], report.timings[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def error_curve(
    bases: Sequence[VelocityBasis],
    problem: KineticProblem,
    space_grid: SpaceGrid,
    reference: DensityField,
    times: Optional[Sequence[float]] = None,
    cfl: float = DEFAULT_CFL,
) -> list[float]:
    times = comparison_times(problem) if times is None else times
    return [basis_error(b, problem, space_grid, reference, times, cfl) for b in bases]


def legendre_errors(problem, velocity_grid, space_grid, reference, m_max, times=None, cfl=DEFAULT_CFL):
    bases = [legendre_basis(m, velocity_grid) for m in range(1, m_max + 1)]
    return error_curve(bases, problem, space_grid, reference, times, cfl)
