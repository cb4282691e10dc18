"""
Study runners behind the command line: multigrid iteration counts, discretization
errors with convergence orders, and condition numbers of the condensed matrices.
"""
import itertools
import logging
import time

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from edg_multigrid.edg import PENALTY_LAWS, PenaltyLaw, assemble_level, eoc, l2_errors, reconstruct
from edg_multigrid.exceptions import ConfigurationError, ReportWriteError
from edg_multigrid.mesh import TriMesh, build_figure1_coarse, build_hierarchy, read_mesh
from edg_multigrid.multigrid import (
    SmootherConfig,
    estimate_extreme_eigenvalues,
    nested_solve,
    setup_multigrid,
)

logger = logging.getLogger(__name__)

STUDY_KINDS = ("iters", "eoc", "spectral")
RHS_CASES = ("one", "sine")
FORMATS = ("csv", "md")
STUDY_DEGREES = (1, 2, 3)

KEY_COLUMNS = ["degree", "tau", "steps", "level"]
COLUMNS = {
    "iters": KEY_COLUMNS + ["n_dofs", "iterations", "converged"],
    "eoc": KEY_COLUMNS + ["mesh_index", "n_dofs", "iterations", "converged", "e_u", "e_q", "eoc_u", "eoc_q"],
    "spectral": KEY_COLUMNS + ["n_dofs", "lambda_min", "lambda_max", "kappa", "kappa_ratio"],
}


# Right hand sides
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
def constant_one(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.ones_like(x)

def sine_forcing(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 8.0 * np.pi ** 2 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)

def sine_solution(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)

def sine_flux(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """q = -grad u for the sine solution."""
    return (
        -2 * np.pi * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y),
        -2 * np.pi * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y),
    )

FORCING = {"one": constant_one, "sine": sine_forcing}


# Configuration
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    study: str = "iters"
    degree: int = 1
    levels: int = 6
    tau: str = "inv_h"
    tau_coeff: float = 1.0
    smoother: str = "sgs"
    steps: int = 1
    damping: float = 0.8
    rhs: str = "one"
    tol: float = 1e-6
    eoc_tol: float = 1e-12
    output_format: str = "csv"
    mesh: Optional[str] = None
    diagonals: str = "figure"
    timings: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build and validate a config from a flat settings dict; 'format' is
        accepted for output_format.

        Raises:
            ConfigurationError: On unknown keys or invalid values.
        """
        data = dict(data)
        if "format" in data:
            data["output_format"] = data.pop("format")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigurationError(unknown[0], data[unknown[0]], "unknown setting")
        values = {}
        for name, value in data.items():
            if value is None:
                continue
            kind = known[name].type
            try:
                if kind in (int, "int"):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError
                    value = int(value)
                elif kind in (float, "float"):
                    value = float(value)
                elif kind in (bool, "bool"):
                    value = bool(value)
                elif kind in (str, "str") or name == "mesh":
                    value = str(value)
            except (TypeError, ValueError):
                raise ConfigurationError(name, value, f"expected {kind}") from None
            values[name] = value
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        if self.study not in STUDY_KINDS:
            raise ConfigurationError("study", self.study, f"expected one of {STUDY_KINDS}")
        if self.degree not in STUDY_DEGREES:
            raise ConfigurationError("degree", self.degree, f"expected one of {STUDY_DEGREES}")
        if self.levels < 0:
            raise ConfigurationError("levels", self.levels, "must be >= 0")
        if self.study == "iters" and self.levels < 1:
            raise ConfigurationError("levels", self.levels, "iteration studies need at least one refinement")
        if self.tau not in PENALTY_LAWS:
            raise ConfigurationError("tau", self.tau, f"expected one of {PENALTY_LAWS}")
        if self.tau_coeff <= 0:
            raise ConfigurationError("tau_coeff", self.tau_coeff, "must be positive")
        if self.rhs not in RHS_CASES:
            raise ConfigurationError("rhs", self.rhs, f"expected one of {RHS_CASES}")
        if self.tol <= 0:
            raise ConfigurationError("tol", self.tol, "must be positive")
        if self.eoc_tol <= 0:
            raise ConfigurationError("eoc_tol", self.eoc_tol, "must be positive")
        if self.output_format not in FORMATS:
            raise ConfigurationError("format", self.output_format, f"expected one of {FORMATS}")
        if self.diagonals not in ("figure", "union_jack"):
            raise ConfigurationError("diagonals", self.diagonals, "expected 'figure' or 'union_jack'")
        if self.mesh is not None and not Path(self.mesh).is_file():
            raise ConfigurationError("mesh", self.mesh, "file not found")
        # kind, steps and damping
        _ = self.smoother_config

    @property
    def smoother_config(self) -> SmootherConfig:
        return SmootherConfig(kind=self.smoother, steps=self.steps, damping=self.damping)

    @property
    def penalty(self) -> PenaltyLaw:
        return PenaltyLaw(self.tau, self.tau_coeff)

    @property
    def forcing(self) -> Callable:
        return FORCING[self.rhs]

    @property
    def label(self) -> str:
        return f"{self.study}|p={self.degree}|tau={self.tau}|m={self.steps}"

    def coarse_mesh(self) -> TriMesh:
        if self.mesh is not None:
            return read_mesh(self.mesh)
        return build_figure1_coarse(self.diagonals)


def expand_configs(settings: Dict[str, Any]) -> List[ExperimentConfig]:
    """
    One config per combination of the list-valued settings degree, tau and
    steps, in sorted order.
    """
    def as_list(value):
        return list(value) if isinstance(value, (list, tuple)) else [value]

    settings = dict(settings)
    sweeps = {name: as_list(settings.pop(name)) for name in ("degree", "tau", "steps") if name in settings}
    names = list(sweeps)
    configs = [
        ExperimentConfig.from_dict({**settings, **dict(zip(names, combination))})
        for combination in itertools.product(*(sweeps[name] for name in names))
    ]
    configs = sorted(set(configs), key=lambda c: (c.degree, c.tau, c.steps))
    logger.info("Expanded settings into %d studies", len(configs))
    return configs


# Result tables
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
@dataclass(eq=False)
class ResultTable:
    kind: str
    frame: pd.DataFrame

    @classmethod
    def from_rows(cls, kind: str, rows: List[Dict[str, Any]], timings: bool = False) -> "ResultTable":
        columns = COLUMNS[kind] + (["wall_time"] if timings else [])
        frame = pd.DataFrame(rows, columns=columns)
        return cls(kind=kind, frame=frame).sorted()

    def sorted(self) -> "ResultTable":
        frame = self.frame.sort_values(KEY_COLUMNS, kind="mergesort").reset_index(drop=True)
        return ResultTable(kind=self.kind, frame=frame)

    def rows(self) -> List[Dict[str, Any]]:
        return self.frame.to_dict(orient="records")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def all_converged(self) -> bool:
        if "converged" not in self.frame:
            return True
        return bool(self.frame["converged"].astype(bool).all())


def emit(table: ResultTable, output_format: str, path: Optional[Union[str, Path]] = None) -> str:
    """
    Render a table as CSV or markdown and write it to path if given.

    Raises:
        ConfigurationError: For an unknown format.
        ReportWriteError: If the file cannot be written.
    """
    if output_format == "csv":
        text = table.frame.to_csv(index=False, lineterminator="\n")
    elif output_format == "md":
        text = table.frame.to_markdown(index=False, floatfmt=".4g") + "\n"
    else:
        raise ConfigurationError("format", output_format, f"expected one of {FORMATS}")

    if path is not None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as e:
            logger.error("Writing report [%s] failed: %s", path, e)
            raise ReportWriteError(str(path), str(e)) from e
        logger.info("Report written to [%s]", path)
    return text


def read_table(path: Union[str, Path]) -> ResultTable:
    frame = pd.read_csv(path, float_precision="round_trip")
    for kind, columns in COLUMNS.items():
        if list(frame.columns[:len(columns)]) == columns and len(frame.columns) - len(columns) in (0, 1):
            return ResultTable(kind=kind, frame=frame)
    raise ValueError(f"Unrecognized table columns in {path}: {list(frame.columns)}")


# Studies
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
def _row(config: ExperimentConfig, level: int, **values) -> Dict[str, Any]:
    return {"degree": config.degree, "tau": config.tau, "steps": config.steps, "level": level, **values}


def run_iteration_study(config: ExperimentConfig) -> ResultTable:
    """Nested-iteration multigrid solves; iteration counts for levels 1..L."""
    logger.info("Study [%s] started", config.label)
    meshes = build_hierarchy(config.coarse_mesh(), config.levels)
    hier = setup_multigrid(meshes, config.degree, config.penalty, config.forcing, config.smoother_config)
    results = nested_solve(hier, config.levels, config.tol)

    rows = []
    for level, (_, report) in enumerate(results):
        if level == 0:
            continue
        row = _row(config, level, n_dofs=hier.levels[level].n_dofs,
                   iterations=report.iterations, converged=report.converged)
        if config.timings:
            row["wall_time"] = report.wall_time
        rows.append(row)
    logger.info("Study [%s] finished: iterations %s", config.label, [r["iterations"] for r in rows])
    return ResultTable.from_rows("iters", rows, config.timings)


def run_eoc_study(config: ExperimentConfig) -> ResultTable:
    """
    Errors of u and q against the sine solution on levels 0..L and their
    convergence orders. Systems are solved by nested multigrid down to eoc_tol
    so algebraic errors stay below the discretization errors.

    mesh_index numbers the meshes from 1 for the coarse grid, so the order in
    the row with mesh_index k compares meshes k - 1 and k.
    """
    if config.rhs != "sine":
        logger.warning("Study [%s] measures errors against the sine solution but rhs is [%s]", config.label, config.rhs)
    logger.info("Study [%s] started", config.label)
    meshes = build_hierarchy(config.coarse_mesh(), config.levels)
    hier = setup_multigrid(meshes, config.degree, config.penalty, config.forcing, config.smoother_config)
    results = nested_solve(hier, config.levels, config.eoc_tol)

    errors_u, errors_q, rows = [], [], []
    for level, (lam, report) in enumerate(results):
        start = time.perf_counter()
        condensed = hier.levels[level].condensed
        solution = reconstruct(condensed, lam, config.forcing)
        e_u, e_q = l2_errors(solution, sine_solution, sine_flux)
        errors_u.append(e_u)
        errors_q.append(e_q)
        row = _row(config, level, mesh_index=level + 1, n_dofs=condensed.n_dofs, iterations=report.iterations,
                   converged=report.converged, e_u=e_u, e_q=e_q)
        if config.timings:
            row["wall_time"] = report.wall_time + time.perf_counter() - start
        rows.append(row)

    for row, rate_u, rate_q in zip(rows, eoc(errors_u), eoc(errors_q)):
        row["eoc_u"] = np.nan if rate_u is None else rate_u
        row["eoc_q"] = np.nan if rate_q is None else rate_q
    logger.info("Study [%s] finished: EOC(u) %s", config.label, [r["eoc_u"] for r in rows])
    return ResultTable.from_rows("eoc", rows, config.timings)


def run_spectral_study(config: ExperimentConfig) -> ResultTable:
    """Extreme eigenvalues and condition numbers of A on levels 0..L."""
    logger.info("Study [%s] started", config.label)
    meshes = build_hierarchy(config.coarse_mesh(), config.levels)
    rows = []
    previous = None
    for mesh in meshes.levels:
        start = time.perf_counter()
        condensed = assemble_level(mesh, config.degree, config.penalty, None)
        low, high = estimate_extreme_eigenvalues(condensed)
        kappa = high / low
        row = _row(config, mesh.level, n_dofs=condensed.n_dofs, lambda_min=low, lambda_max=high,
                   kappa=kappa, kappa_ratio=np.nan if previous is None else kappa / previous)
        if config.timings:
            row["wall_time"] = time.perf_counter() - start
        rows.append(row)
        previous = kappa
    logger.info("Study [%s] finished", config.label)
    return ResultTable.from_rows("spectral", rows, config.timings)


STUDIES: Dict[str, Callable[[ExperimentConfig], ResultTable]] = {
    "iters": run_iteration_study,
    "eoc": run_eoc_study,
    "spectral": run_spectral_study,
}


def run_study(config: ExperimentConfig) -> ResultTable:
    return STUDIES[config.study](config)


def merge_tables(tables: List[ResultTable]) -> ResultTable:
    if not tables:
        raise ValueError("No tables to merge")
    kinds = {table.kind for table in tables}
    if len(kinds) != 1:
        raise ValueError(f"Cannot merge tables of different kinds: {sorted(kinds)}")
    frame = pd.concat([table.frame for table in tables], ignore_index=True)
    return ResultTable(kind=tables[0].kind, frame=frame).sorted()
