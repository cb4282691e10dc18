"""
Dense and sparse kernels on top of numpy/scipy.

SparseMatrix is scipy's CSR matrix with sorted, duplicate-free column indices.
"""
import logging

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu, SuperLU

from edg_multigrid.exceptions import DimensionMismatch, SingularMatrixError

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix


@dataclass(frozen=True, eq=False)
class DenseFactorization:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def size(self) -> int:
        return self.lu.shape[0]


def assemble_csr(rows: np.ndarray, cols: np.ndarray, values: np.ndarray, shape: Tuple[int, int]) -> SparseMatrix:
    """COO triplets to CSR; duplicates are summed in a deterministic order."""
    matrix = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    if A.shape[1] != len(x):
        raise DimensionMismatch(A.shape[1], len(x), "spmv")
    return A @ x


def transpose_apply(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    if A.shape[0] != len(x):
        raise DimensionMismatch(A.shape[0], len(x), "transpose_apply")
    return A.T @ x


def factorize(A: np.ndarray) -> DenseFactorization:
    """
    LU factorization with partial pivoting.

    Raises:
        SingularMatrixError: If a pivot vanishes, with the offending pivot index.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"factorize expects a square matrix, got shape {A.shape}")
    scale = np.abs(A).max() if A.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError(0)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    singular = np.flatnonzero(pivots <= np.finfo(float).eps * scale * A.shape[0])
    if singular.size:
        logger.error("Singular matrix of size %d: zero pivot at %d", A.shape[0], singular[0])
        raise SingularMatrixError(int(singular[0]))
    return DenseFactorization(lu=lu, piv=piv)


def back_solve(fact: DenseFactorization, b: np.ndarray) -> np.ndarray:
    if fact.size != len(b):
        raise DimensionMismatch(fact.size, len(b), "back_solve")
    return scipy.linalg.lu_solve((fact.lu, fact.piv), b)


def sym_eig(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a dense symmetric matrix in ascending order."""
    return scipy.linalg.eigh(A, eigvals_only=True)


def triangular_factor(T: SparseMatrix) -> SuperLU:
    """
    Factorize a sparse triangular matrix without reordering, so that solves
    are plain forward or backward substitutions in index order.
    """
    return splu(
        sp.csc_matrix(T),
        permc_spec="NATURAL",
        diag_pivot_thresh=0.0,
    )
