"""Experiment driver: run configuration, cached reference solutions and the
error studies comparing Legendre and greedy bases."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .basis import save_basis
from .greedy import (
    ErrorReport,
    GreedyReport,
    comparison_times,
    greedy_basis_generation,
    legendre_errors,
    relative_l1_error,
)
from .moments import DEFAULT_CFL, DensityField
from .problem import KineticProblem, SpaceGrid, sourcebeam, space_grid
from .reference import density_of_full, solve_reference, truth_points, truth_snapshots
from .snapshots import ParameterBox, generate_snapshot_set
from .velocity_fem import NodalFunction, VelocityGrid, make_grid

log = logging.getLogger(__name__)

SCENARIOS: dict[str, Callable[[], KineticProblem]] = {"sourcebeam": sourcebeam}

METHODS = ("legendre", "greedy_truth", "greedy_pde")

# bump when a change to the solvers invalidates cached results
CACHE_VERSION = 1

_BOX_FIELDS = ("t", "x", "P", "dxP", "dtP", "boundary")


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "sourcebeam"
    h_exponents: tuple = (3, 4, 5)
    ref_exponent: int = 7
    m_max: int = 13
    source: str = "truth"
    n_sample: int = 500
    seed: int = 20240
    cfl: float = DEFAULT_CFL
    out: str = "runs"
    n_compare: int = 16
    workers: int = 1
    box: ParameterBox = field(default_factory=ParameterBox)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; known: {', '.join(SCENARIOS)}")
        if not self.h_exponents:
            raise ValueError("need at least one mesh exponent")
        if any(n < 1 for n in self.h_exponents):
            raise ValueError("mesh exponents must be positive")
        if self.ref_exponent < max(self.h_exponents):
            raise ValueError("reference exponent must be >= every mesh exponent")
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")
        if self.source not in ("truth", "pde"):
            raise ValueError("snapshot source must be 'truth' or 'pde'")
        if self.n_sample < 1:
            raise ValueError("n_sample must be >= 1")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.n_compare < 1 or self.workers < 1:
            raise ValueError("n_compare and workers must be >= 1")

    @property
    def problem(self) -> KineticProblem:
        return SCENARIOS[self.scenario]()

    def digest(self, *keys: str) -> str:
        """Short content hash of the named fields (all fields by default)."""
        data = dataclasses.asdict(self)
        if keys:
            data = {k: data[k] for k in keys}
        data["version"] = CACHE_VERSION
        text = json.dumps(data, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _fmt_interval(iv) -> str:
    return f"{iv[0]!r}, {iv[1]!r}"


def config_to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {
        "scenario": cfg.scenario,
        "h_exponents": ", ".join(str(n) for n in cfg.h_exponents),
        "ref_exponent": str(cfg.ref_exponent),
        "m_max": str(cfg.m_max),
        "source": cfg.source,
        "n_sample": str(cfg.n_sample),
        "seed": str(cfg.seed),
        "cfl": repr(cfg.cfl),
        "out": cfg.out,
        "n_compare": str(cfg.n_compare),
        "workers": str(cfg.workers),
    }
    box = {name: _fmt_interval(getattr(cfg.box, name)) for name in _BOX_FIELDS}
    box["n_quad"] = str(cfg.box.n_quad)
    parser["box"] = box
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_exponents(text: str) -> tuple:
    """``"3,4,5"`` or ``"3..7"`` (inclusive) to a tuple of integers."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(p) for p in text.split(".."))
        if hi < lo:
            raise ValueError(f"empty exponent range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _parse_interval(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {text!r}")
    return tuple(parts)


_RUN_CASTS = {
    "scenario": str,
    "h_exponents": parse_exponents,
    "ref_exponent": int,
    "m_max": int,
    "source": str,
    "n_sample": int,
    "seed": int,
    "cfl": float,
    "out": str,
    "n_compare": int,
    "workers": int,
}


def config_from_ini(text: str, overrides: Optional[dict] = None) -> RunConfig:
    """Build a config from INI text; ``overrides`` (non-None values) win."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_string(text)
    values = {}
    if parser.has_section("run"):
        for key, raw in parser["run"].items():
            if key not in _RUN_CASTS:
                raise ValueError(f"unknown config key [run] {key}")
            values[key] = _RUN_CASTS[key](raw)
    if parser.has_section("box"):
        box = {}
        for key, raw in parser["box"].items():
            if key == "n_quad":
                box[key] = int(raw)
            elif key in _BOX_FIELDS:
                box[key] = _parse_interval(raw)
            else:
                raise ValueError(f"unknown config key [box] {key}")
        values["box"] = ParameterBox(**box)
    unknown = set(parser.sections()) - {"run", "box"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


def mesh(problem: KineticProblem, exponent: int) -> tuple[SpaceGrid, VelocityGrid]:
    """Space and velocity grids with ``h_x = h_v = 2^-exponent``."""
    n_x = problem.length * 2**exponent
    if abs(n_x - round(n_x)) > 1e-9:
        raise ValueError(f"domain length {problem.length} is not a multiple of 2^-{exponent}")
    return space_grid(problem, int(round(n_x))), make_grid(2 * 2**exponent)


def output_times(problem: KineticProblem, n_compare: int = 16) -> np.ndarray:
    """Union of the comparison times and the truth-snapshot times."""
    _, ts = truth_points(problem.x_range, problem.t_end)
    return np.unique(np.round(np.concatenate([comparison_times(problem, n_compare), ts]), 12))


@dataclass(frozen=True)
class FullRun:
    density: DensityField
    snapshots: list  # truth snapshots as NodalFunction


class ReferenceCache:
    """Full solutions keyed by a content hash of (scenario, exponent, cfl, times)."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    def _key(self, scenario: str, exponent: int, cfl: float, times: np.ndarray) -> str:
        text = json.dumps(
            dict(scenario=scenario, exponent=exponent, cfl=cfl, times=[repr(float(t)) for t in times], v=CACHE_VERSION),
            sort_keys=True,
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def path(self, scenario: str, exponent: int, cfl: float, times: np.ndarray) -> Path:
        return self.directory / f"full-{scenario}-n{exponent}-{self._key(scenario, exponent, cfl, times)}.npz"

    def get(self, scenario: str, exponent: int, cfl: float = DEFAULT_CFL, n_compare: int = 16) -> FullRun:
        problem = SCENARIOS[scenario]()
        times = output_times(problem, n_compare)
        sg, vg = mesh(problem, exponent)
        path = self.path(scenario, exponent, cfl, times)
        if path.exists():
            with np.load(path) as data:
                density = DensityField(sg, data["times"], data["density"])
                snaps = [NodalFunction(vg, row) for row in data["snapshots"]]
            log.info("reusing cached full solution %s", path)
            return FullRun(density, snaps)
        log.info("solving full problem at h=2^-%d (%d x %d)", exponent, sg.n_cells, vg.n_nodes)
        sol = solve_reference(problem, sg.n_cells, vg.n_cells, times, cfl)
        density = density_of_full(sol)
        snaps = truth_snapshots(sol, t_end=problem.t_end)
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, times=sol.times, density=density.values, snapshots=np.array([s.values for s in snaps]))
        os.replace(tmp, path)
        return FullRun(density, snaps)


def richardson_adjust(error: float, h: float, h_ref: float, h_target: float) -> float:
    """Rescale an error measured against a reference at ``h_ref`` to one
    against ``h_target`` assuming first-order convergence."""
    return error * (h - h_target) / (h - h_ref)


def discretization_errors(cfg: RunConfig, cache: ReferenceCache) -> list[tuple]:
    """Rows ``(h, error)`` of the full solver at the study meshes against the
    reference mesh."""
    ref = cache.get(cfg.scenario, cfg.ref_exponent, cfg.cfl, cfg.n_compare).density
    times = comparison_times(cfg.problem, cfg.n_compare)
    rows = []
    for n in cfg.h_exponents:
        run = cache.get(cfg.scenario, n, cfg.cfl, cfg.n_compare)
        rows.append((2.0**-n, relative_l1_error(run.density, ref, times)))
    return rows


def greedy_snapshots(cfg: RunConfig, exponent: int, cache: ReferenceCache) -> list[NodalFunction]:
    problem = cfg.problem
    if cfg.source == "truth":
        return cache.get(cfg.scenario, exponent, cfg.cfl, cfg.n_compare).snapshots
    _, vg = mesh(problem, exponent)
    return generate_snapshot_set(cfg.box, cfg.n_sample, cfg.seed, problem, vg)


def run_error_study(
    method: str,
    cfg: RunConfig,
    cache: ReferenceCache,
    on_greedy: Optional[Callable[[int, GreedyReport], None]] = None,
) -> ErrorReport:
    """Errors for m = 1..m_max at every study mesh.

    Greedy methods run one greedy selection per mesh at ``m_max`` and report
    the selection errors of its prefix bases; ``on_greedy(exponent, report)``
    receives each greedy run for persistence.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method != "legendre":
        wanted = method.split("_", 1)[1]
        if cfg.source != wanted:
            cfg = dataclasses.replace(cfg, source=wanted)
    problem = cfg.problem
    ref = cache.get(cfg.scenario, cfg.ref_exponent, cfg.cfl, cfg.n_compare).density
    times = comparison_times(problem, cfg.n_compare)
    report = ErrorReport()
    for n in cfg.h_exponents:
        h = 2.0**-n
        sg, vg = mesh(problem, n)
        if method == "legendre":
            errs = legendre_errors(problem, vg, sg, ref, cfg.m_max, times, cfg.cfl)
        else:
            snaps = greedy_snapshots(cfg, n, cache)
            greedy = greedy_basis_generation(
                snaps, problem, sg, cfg.m_max, ref, cfl=cfg.cfl, times=times, workers=cfg.workers
            )
            errs = greedy.error_table
            if on_greedy is not None:
                on_greedy(n, greedy)
        for m, e in enumerate(errs, start=1):
            report.add(method, h, m, e)
        log.info("%s h=2^-%d: %s", method, n, " ".join(f"{e:.4g}" for e in errs))
    return report


def save_greedy(directory: Path, report: GreedyReport) -> None:
    """Basis file per m plus ``chosen.csv`` with ``m,chosen_index,error``."""
    directory.mkdir(parents=True, exist_ok=True)
    for m, basis in enumerate(report.bases, start=1):
        save_basis(basis, directory / f"basis_m{m:02d}.txt")
    with open(directory / "chosen.csv", "w") as fh:
        fh.write("m,chosen_index,error\n")
        for m, (i, e) in enumerate(zip(report.chosen_indices, report.error_table), start=1):
            fh.write(f"{m},{i},{e!r}\n")

