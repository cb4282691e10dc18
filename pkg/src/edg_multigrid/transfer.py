"""
Intergrid transfer between consecutive skeleton spaces.

The injection is the composition of three steps: continuous extension of
a coarse skeleton function into the cells (face nodes copy the trace,
interior nodes take the local solution), the natural embedding of that
continuous piecewise polynomial into the fine level, and the trace on the
fine skeleton. The restriction is its Euclidean transpose.
"""
import logging

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from scipy.sparse.linalg import spsolve

from edg_multigrid import linalg
from edg_multigrid.basis import CellBasis, eval_cell_basis
from edg_multigrid.edg import CondensedLevel, LocalSystems, SkeletonDofMap
from edg_multigrid.exceptions import InjectionMismatch
from edg_multigrid.mesh import MeshHierarchy, locate_in_parent

logger = logging.getLogger(__name__)

PRUNE_TOLERANCE = 1e-14
AGREEMENT_TOLERANCE = 1e-10
CHUNK_SIZE = 65536


@dataclass(frozen=True, eq=False)
class TransferOperator:
    level: int                    # fine level
    matrix: linalg.SparseMatrix   # (n_dofs(level), n_dofs(level - 1))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @cached_property
    def restriction(self) -> linalg.SparseMatrix:
        return self.matrix.T.tocsr()


def continuous_extension(coarse_level: CondensedLevel, lam: np.ndarray) -> np.ndarray:
    """Nodal P_p coefficients (nc, n) of the continuous extension of lam into the cells."""
    local = coarse_level.dof_map.local_values(lam)
    solvers = coarse_level.solvers
    return np.einsum("cij,cj->ci", solvers.extension[solvers.cell_class], local)


def _node_parents(fine_dofs: SkeletonDofMap, parents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distinct (fine dof, coarse cell) incidences sorted by dof then coarse cell,
    and the index of the first incidence of every fine dof.
    """
    gather = fine_dofs.cell_dofs()
    cells = np.repeat(np.arange(len(gather)), gather.shape[1])
    dofs = gather.ravel()
    valid = dofs >= 0
    pairs = np.unique(np.stack([dofs[valid], parents[cells[valid]]], axis=1), axis=0)
    first = np.flatnonzero(np.r_[True, pairs[1:, 0] != pairs[:-1, 0]])
    return pairs, first


def _reference_coords(hierarchy: MeshHierarchy, level: int, points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    geo = hierarchy.levels[level - 1].geometry
    return np.einsum("mij,mj->mi", geo.inverse[cells], points - geo.origin[cells])


def _check_agreement(
    hierarchy: MeshHierarchy,
    level: int,
    coarse_dofs: SkeletonDofMap,
    fine_dofs: SkeletonDofMap,
    solvers: LocalSystems,
    pairs: np.ndarray,
    first: np.ndarray,
    n_samples: int = 2,
    seed: int = 0,
    ) -> None:
    """Evaluate the extension of random coarse data from every incident coarse cell and compare."""
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((coarse_dofs.n_dofs, n_samples))
    local = np.append(samples, np.zeros((1, n_samples)), axis=0)[coarse_dofs.cell_dofs()]
    nodal = np.einsum("cij,cjk->cik", solvers.extension[solvers.cell_class], local)

    basis = CellBasis.create(coarse_dofs.degree)
    values = np.empty((len(pairs), n_samples))
    for start in range(0, len(pairs), CHUNK_SIZE):
        sl = slice(start, start + CHUNK_SIZE)
        dofs, cells = pairs[sl, 0], pairs[sl, 1]
        xi = _reference_coords(hierarchy, level, fine_dofs.node_coords[dofs], cells)
        phi, _ = eval_cell_basis(basis, xi, tol=1e-10)
        values[sl] = np.einsum("mi,mik->mk", phi, nodal[cells])

    owner = np.repeat(first, np.diff(np.r_[first, len(pairs)]))
    scale = max(1.0, float(np.abs(values).max())) if values.size else 1.0
    deviation = np.abs(values - values[owner]).max(axis=1) / scale
    worst = int(np.argmax(deviation)) if deviation.size else 0
    if deviation.size and deviation[worst] > AGREEMENT_TOLERANCE:
        logger.error(
            "Extension mismatch on level [%d] at fine dof [%d]: %.3e",
            level, pairs[worst, 0], deviation[worst],
        )
        raise InjectionMismatch(int(pairs[worst, 0]), float(deviation[worst]))


def build_injection(
    hierarchy: MeshHierarchy,
    level: int,
    coarse_dofs: SkeletonDofMap,
    fine_dofs: SkeletonDofMap,
    coarse_solvers: LocalSystems,
    ) -> TransferOperator:
    """
    Assemble the injection from level - 1 to level.

    Row g holds the weights of the coarse dofs in the extension evaluated at
    fine skeleton node g, taken from the lowest-index coarse cell containing
    the node. Nodes on coarse faces are evaluated from every incident coarse
    cell and checked for agreement.

    Raises:
        ValueError: If the degrees of the dof maps differ or level < 1.
        InjectionMismatch: If the extension is discontinuous at a fine node.
    """
    if level < 1:
        raise ValueError(f"Injection needs a fine level >= 1, got {level}")
    if coarse_dofs.degree != fine_dofs.degree:
        raise ValueError(f"Degree mismatch between levels: {coarse_dofs.degree} != {fine_dofs.degree}")

    parents = locate_in_parent(hierarchy, level)
    pairs, first = _node_parents(fine_dofs, parents)
    _check_agreement(hierarchy, level, coarse_dofs, fine_dofs, coarse_solvers, pairs, first)

    basis = CellBasis.create(coarse_dofs.degree)
    coarse_gather = coarse_dofs.cell_dofs()
    extension = coarse_solvers.extension
    rows, cols, vals = [], [], []
    for start in range(0, len(first), CHUNK_SIZE):
        dofs, cells = pairs[first[start:start + CHUNK_SIZE]].T
        xi = _reference_coords(hierarchy, level, fine_dofs.node_coords[dofs], cells)
        phi, _ = eval_cell_basis(basis, xi, tol=1e-10)
        weights = np.einsum("mi,mij->mj", phi, extension[coarse_solvers.cell_class[cells]])
        columns = coarse_gather[cells]
        keep = (columns >= 0) & (np.abs(weights) > PRUNE_TOLERANCE)
        rows.append(np.broadcast_to(dofs[:, None], columns.shape)[keep])
        cols.append(columns[keep])
        vals.append(weights[keep])

    matrix = linalg.assemble_csr(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        (fine_dofs.n_dofs, coarse_dofs.n_dofs),
    )
    logger.info(
        "Injection [%d] -> [%d] built: %dx%d, %d nonzeros",
        level - 1, level, matrix.shape[0], matrix.shape[1], matrix.nnz,
    )
    return TransferOperator(level=level, matrix=matrix)


def inject(op: TransferOperator, lam_coarse: np.ndarray) -> np.ndarray:
    return linalg.spmv(op.matrix, lam_coarse)


def restrict(op: TransferOperator, r_fine: np.ndarray) -> np.ndarray:
    """Euclidean adjoint of the injection."""
    return linalg.spmv(op.restriction, r_fine)


def weighted_restriction(
    op: TransferOperator,
    coarse_gram: linalg.SparseMatrix,
    fine_gram: linalg.SparseMatrix,
    r: np.ndarray,
    ) -> np.ndarray:
    """
    Adjoint of the injection in the weighted skeleton inner products:
    <P r, mu>_coarse = <r, I mu>_fine for all coarse mu.
    """
    rhs = linalg.transpose_apply(op.matrix, fine_gram @ r)
    return np.atleast_1d(spsolve(coarse_gram.tocsc(), rhs))


def boundedness_constant(
    op: TransferOperator,
    fine: CondensedLevel,
    coarse: CondensedLevel,
    samples: int = 100,
    seed: int = 0,
    ) -> float:
    """Largest observed a_l(I lam, I lam) / a_{l-1}(lam, lam) over random coarse vectors."""
    rng = np.random.default_rng(seed)
    lam = rng.standard_normal((coarse.n_dofs, samples))
    injected = op.matrix @ lam
    fine_energy = np.einsum("ik,ik->k", injected, fine.A @ injected)
    coarse_energy = np.einsum("ik,ik->k", lam, coarse.A @ lam)
    constant = float(np.max(fine_energy / coarse_energy))
    logger.info("Injection [%d] boundedness over %d samples: %.4f", op.level, samples, constant)
    return constant
