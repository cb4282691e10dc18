"""
Homogeneous V-cycle multigrid on the condensed skeleton systems.

Every level uses the same discretization; the coarse-grid correction goes
through the injection and its Euclidean transpose, and level 0 is solved
directly. Smoothing step i applies R for odd i and its adjoint for even i,
with one counter running through pre- and post-smoothing. With the
symmetric Gauss-Seidel smoother R is a forward sweep followed by a backward
sweep, so R equals its adjoint and one step costs two sweeps.
"""
import logging
import time

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, SuperLU, eigsh

from edg_multigrid import linalg
from edg_multigrid.edg import CondensedLevel, Forcing, PenaltyLaw, assemble_level
from edg_multigrid.exceptions import (
    ConfigurationError,
    DimensionMismatch,
    EigenvalueEstimateError,
    ZeroDiagonal,
)
from edg_multigrid.mesh import MeshHierarchy
from edg_multigrid.transfer import TransferOperator, build_injection, inject, restrict

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
DENSE_EIGEN_LIMIT = 5000


class SmootherKind(Enum):
    GAUSS_SEIDEL = "gs"
    SYMMETRIC_GAUSS_SEIDEL = "sgs"
    JACOBI = "jacobi"


@dataclass(frozen=True)
class SmootherConfig:
    kind: SmootherKind = SmootherKind.GAUSS_SEIDEL
    steps: int = 1
    damping: float = 0.8

    def __post_init__(self):
        if not isinstance(self.kind, SmootherKind):
            try:
                object.__setattr__(self, "kind", SmootherKind(self.kind))
            except ValueError:
                raise ConfigurationError("smoother", self.kind, "expected 'gs', 'sgs' or 'jacobi'") from None
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError("steps", self.steps, "must be an integer >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping", self.damping, "must lie in (0, 1]")


class Smoother:
    """
    Point smoother of one level. Gauss-Seidel keeps factorized copies of the
    lower and upper triangles of A, so a forward sweep is x + (D + L)^{-1} r
    and its adjoint x + (D + U)^{-1} r. The symmetric variant applies both
    within one step: (D + U)^{-1} D (D + L)^{-1} r.
    """

    def __init__(self, A: linalg.SparseMatrix, config: SmootherConfig):
        self.config = config
        self.A = A
        self.diagonal = A.diagonal()
        zero = np.flatnonzero(self.diagonal == 0.0)
        if zero.size:
            logger.error("Zero diagonal in row [%d] of a %d x %d matrix", zero[0], *A.shape)
            raise ZeroDiagonal(int(zero[0]))
        self.lower: Optional[SuperLU] = None
        self.upper: Optional[SuperLU] = None
        if config.kind is not SmootherKind.JACOBI:
            self.lower = linalg.triangular_factor(sp.tril(A, format="csc"))
            self.upper = linalg.triangular_factor(sp.triu(A, format="csc"))

    def correction(self, residual: np.ndarray, step: int) -> np.ndarray:
        if self.config.kind is SmootherKind.JACOBI:
            return self.config.damping * residual / self.diagonal
        if self.config.kind is SmootherKind.SYMMETRIC_GAUSS_SEIDEL:
            forward = self.lower.solve(residual)
            return forward + self.upper.solve(residual - linalg.spmv(self.A, forward))
        if step % 2 == 1:
            return self.lower.solve(residual)
        return self.upper.solve(residual)


@dataclass(eq=False)
class MgLevel:
    condensed: CondensedLevel
    smoother: Smoother
    transfer: Optional[TransferOperator] = None   # from level - 1, None on level 0

    @property
    def A(self) -> linalg.SparseMatrix:
        return self.condensed.A

    @property
    def b(self) -> np.ndarray:
        return self.condensed.b

    @property
    def n_dofs(self) -> int:
        return self.condensed.n_dofs


@dataclass(eq=False)
class MgHierarchy:
    levels: List[MgLevel]
    smoother: SmootherConfig
    coarse: linalg.DenseFactorization

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> int:
        return len(self.levels) - 1


@dataclass
class SolveReport:
    level: int
    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    initial_residual: float = 0.0


def build_mg_hierarchy(
    levels: Sequence[CondensedLevel],
    transfers: Sequence[TransferOperator],
    smoother: SmootherConfig,
    ) -> MgHierarchy:
    """
    Args:
        levels: Condensed systems of levels 0..L
        transfers: Injections into levels 1..L
        smoother: Smoother settings shared by all levels
    Raises:
        DimensionMismatch: If transfer shapes do not chain with the level sizes.
    """
    if len(transfers) != len(levels) - 1:
        raise DimensionMismatch(len(levels) - 1, len(transfers), "build_mg_hierarchy")
    for fine, coarse, op in zip(levels[1:], levels[:-1], transfers):
        if op.shape[0] != fine.n_dofs:
            raise DimensionMismatch(fine.n_dofs, op.shape[0], f"rows of transfer into level {fine.level}")
        if op.shape[1] != coarse.n_dofs:
            raise DimensionMismatch(coarse.n_dofs, op.shape[1], f"columns of transfer into level {fine.level}")

    mg_levels = [
        MgLevel(condensed=level, smoother=Smoother(level.A, smoother), transfer=op)
        for level, op in zip(levels, [None, *transfers])
    ]
    coarse = linalg.factorize(levels[0].A.toarray())
    logger.info("Multigrid hierarchy ready: %s dofs per level", [level.n_dofs for level in levels])
    return MgHierarchy(levels=mg_levels, smoother=smoother, coarse=coarse)


def setup_multigrid(
    meshes: MeshHierarchy,
    p: int,
    penalty: PenaltyLaw,
    f: Optional[Forcing],
    smoother: SmootherConfig,
    ) -> MgHierarchy:
    """Assemble every level of a mesh hierarchy and the injections between them."""
    levels = [assemble_level(mesh, p, penalty, f) for mesh in meshes.levels]
    transfers = [
        build_injection(meshes, l, levels[l - 1].dof_map, levels[l].dof_map, levels[l - 1].solvers)
        for l in range(1, len(levels))
    ]
    return build_mg_hierarchy(levels, transfers, smoother)


def smooth(level: MgLevel, x: np.ndarray, rhs: np.ndarray, step: int) -> np.ndarray:
    """One relaxation x + R^i (rhs - A x); for plain Gauss-Seidel R^i is forward for odd i, backward for even i."""
    return x + level.smoother.correction(rhs - linalg.spmv(level.A, x), step)


def v_cycle(hier: MgHierarchy, level: int, mu: np.ndarray) -> np.ndarray:
    """Apply B_level to mu, starting from a zero initial guess."""
    if level == 0:
        return linalg.back_solve(hier.coarse, mu)
    current = hier.levels[level]
    m = hier.smoother.steps

    x = np.zeros_like(mu)
    for i in range(1, m + 1):
        x = smooth(current, x, mu, i)
    residual = mu - linalg.spmv(current.A, x)
    correction = v_cycle(hier, level - 1, restrict(current.transfer, residual))
    y = x + inject(current.transfer, correction)
    for i in range(m + 1, 2 * m + 1):
        y = smooth(current, y, mu, i)
    return y


def solve(
    hier: MgHierarchy,
    level: int,
    b: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iterations: int = MAX_ITERATIONS,
    ) -> Tuple[np.ndarray, SolveReport]:
    """
    Stationary iteration x <- x + B (b - A x) until ||b - A x|| / ||b|| < tol.

    Returns:
        The iterate and its SolveReport; converged is False if max_iterations was hit.
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    A = hier.levels[level].A
    start = time.perf_counter()
    report = SolveReport(level=level)

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        report.converged = True
        report.wall_time = time.perf_counter() - start
        return np.zeros(A.shape[0]), report

    x = np.zeros(A.shape[0]) if x0 is None else np.array(x0, dtype=float)
    residual = b - linalg.spmv(A, x)
    relative = float(np.linalg.norm(residual)) / b_norm
    report.initial_residual = relative
    while relative >= tol and report.iterations < max_iterations:
        x = x + v_cycle(hier, level, residual)
        residual = b - linalg.spmv(A, x)
        relative = float(np.linalg.norm(residual)) / b_norm
        report.iterations += 1
        report.residual_history.append(relative)
        logger.debug("Level [%d] iteration %d: relative residual %.3e", level, report.iterations, relative)

    report.converged = relative < tol
    report.wall_time = time.perf_counter() - start
    if report.converged:
        logger.info("Level [%d] converged in %d iterations", level, report.iterations)
    else:
        logger.warning(
            "Level [%d] did not converge in %d iterations (relative residual %.3e)",
            level, report.iterations, relative,
        )
    return x, report


def nested_solve(hier: MgHierarchy, L: Optional[int] = None, tol: float = 1e-6) -> List[Tuple[np.ndarray, SolveReport]]:
    """
    Solve level 0 directly, then every finer level starting from the
    injected solution of the level below.
    """
    L = hier.finest if L is None else L
    if not 0 <= L <= hier.finest:
        raise ValueError(f"Level {L} outside hierarchy 0..{hier.finest}")

    start = time.perf_counter()
    x = linalg.back_solve(hier.coarse, hier.levels[0].b)
    results = [(x, SolveReport(level=0, converged=True, wall_time=time.perf_counter() - start))]
    for level in range(1, L + 1):
        current = hier.levels[level]
        x0 = inject(current.transfer, x)
        x, report = solve(hier, level, current.b, x0=x0, tol=tol)
        results.append((x, report))
    return results


def estimate_extreme_eigenvalues(level: CondensedLevel, dense_limit: int = DENSE_EIGEN_LIMIT) -> Tuple[float, float]:
    """
    Smallest and largest eigenvalue of A. Dense symmetric eigensolver up to
    dense_limit unknowns, Lanczos (largest) and shift-invert Lanczos
    (smallest) beyond.

    Raises:
        EigenvalueEstimateError: If Lanczos fails to converge.
    """
    A = level.A
    if A.shape[0] <= dense_limit:
        eigenvalues = linalg.sym_eig(A.toarray())
        return float(eigenvalues[0]), float(eigenvalues[-1])
    try:
        largest = eigsh(A, k=1, which="LA", tol=1e-8, return_eigenvectors=False)
        smallest = eigsh(A.tocsc(), k=1, sigma=0.0, which="LM", tol=1e-8, return_eigenvectors=False)
    except ArpackNoConvergence as e:
        logger.exception("Lanczos failed on level [%d]", level.level)
        raise EigenvalueEstimateError(str(e)) from e
    return float(smallest[0]), float(largest[0])


def condition_number(level: CondensedLevel) -> float:
    low, high = estimate_extreme_eigenvalues(level)
    return high / low
