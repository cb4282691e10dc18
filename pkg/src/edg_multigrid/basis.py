"""
Lagrange bases on the reference triangle and segment, and the quadrature
rules used by every assembly routine.

Reference triangle: vertices (0, 0), (1, 0), (0, 1).
Reference segment: [0, 1].
"""
import logging

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from edg_multigrid.exceptions import UnsupportedDegree

logger = logging.getLogger(__name__)

MIN_DEGREE = 1
MAX_DEGREE = 6
REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def check_degree(p: int) -> None:
    if not MIN_DEGREE <= p <= MAX_DEGREE:
        raise UnsupportedDegree(p, MIN_DEGREE, MAX_DEGREE)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray   # (n, 2) on the triangle, (n,) on the segment
    weights: np.ndarray  # (n,)
    degree: int          # exactness degree


@lru_cache(maxsize=None)
def gauss_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of the given degree."""
    n = degree // 2 + 1
    x, w = leggauss(n)
    return QuadratureRule(points=0.5 * (x + 1.0), weights=0.5 * w, degree=2 * n - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """
    Collapsed (conical product) Gauss rule on the reference triangle.

    The Duffy map (u, v) -> (u, v (1 - u)) turns a degree-k polynomial on the
    triangle into a polynomial of degree k + 1 in u (with the Jacobian 1 - u)
    and degree k in v, so n = ceil((k + 2) / 2) Gauss points per direction
    suffice.
    """
    n = (degree + 3) // 2
    x, w = leggauss(n)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(wt, wt, indexing="ij")
    points = np.stack([u.ravel(), (v * (1.0 - u)).ravel()], axis=1)
    weights = (wu * wv * (1.0 - u)).ravel()
    return QuadratureRule(points=points, weights=weights, degree=degree)


def cell_quadrature(p: int) -> QuadratureRule:
    """Triangle rule exact for total degree 2p + 2."""
    check_degree(p)
    return triangle_rule(2 * p + 2)


def face_quadrature(p: int) -> QuadratureRule:
    """Gauss rule on [0, 1] exact for degree 2p + 1."""
    check_degree(p)
    return gauss_rule(2 * p + 1)


def _exponents(p: int) -> List[Tuple[int, int]]:
    return [(total - b, b) for total in range(p + 1) for b in range(total + 1)]


def lagrange_nodes(p: int) -> np.ndarray:
    """
    Equispaced Lagrange nodes of P_p on the reference triangle.

    Order: the three vertices, then the p - 1 interior nodes of each local edge
    e (opposite vertex e, traversed from vertex (e+1)%3 to (e+2)%3), then the
    cell-interior nodes row by row.
    """
    nodes = [REFERENCE_VERTICES[k] for k in range(3)]
    for e in range(3):
        a = REFERENCE_VERTICES[(e + 1) % 3]
        b = REFERENCE_VERTICES[(e + 2) % 3]
        nodes += [a + (k / p) * (b - a) for k in range(1, p)]
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


@dataclass(frozen=True, eq=False)
class CellBasis:
    degree: int
    nodes: np.ndarray          # (n, 2) reference coordinates
    coefficients: np.ndarray   # (n_monomials, n) monomial coefficients of each shape function
    quadrature: QuadratureRule
    quad_values: np.ndarray    # (nq, n)
    quad_gradients: np.ndarray # (nq, n, 2)

    @classmethod
    def create(cls, p: int) -> "CellBasis":
        return _cell_basis(p)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def n_boundary_nodes(self) -> int:
        return 3 * self.degree

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.arange(self.n_boundary_nodes, self.size)

    def values(self, points: np.ndarray) -> np.ndarray:
        return _monomials(points, self.degree) @ self.coefficients

    def gradients(self, points: np.ndarray) -> np.ndarray:
        dx, dy = _monomial_gradients(points, self.degree)
        return np.stack([dx @ self.coefficients, dy @ self.coefficients], axis=-1)

    def interpolate(self, func) -> np.ndarray:
        """Nodal coefficients of func(x, y) on the reference triangle."""
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), dtype=float)


@dataclass(frozen=True, eq=False)
class FaceBasis:
    degree: int
    nodes: np.ndarray          # (p + 1,) equispaced, endpoints included
    coefficients: np.ndarray   # (p + 1, p + 1)
    quadrature: QuadratureRule
    quad_values: np.ndarray    # (nq, p + 1)
    mass: np.ndarray           # (p + 1, p + 1) mass matrix on [0, 1]

    @classmethod
    def create(cls, p: int) -> "FaceBasis":
        return _face_basis(p)

    @property
    def size(self) -> int:
        return self.degree + 1

    def values(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.power.outer(t, np.arange(self.degree + 1)) @ self.coefficients


def _monomials(points: np.ndarray, p: int) -> np.ndarray:
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    return np.stack([x ** a * y ** b for a, b in _exponents(p)], axis=1)


def _monomial_gradients(points: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray]:
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    dx = [a * x ** max(a - 1, 0) * y ** b for a, b in _exponents(p)]
    dy = [b * x ** a * y ** max(b - 1, 0) for a, b in _exponents(p)]
    return np.stack(dx, axis=1), np.stack(dy, axis=1)


@lru_cache(maxsize=None)
def _cell_basis(p: int) -> CellBasis:
    check_degree(p)
    nodes = lagrange_nodes(p)
    coefficients = np.linalg.inv(_monomials(nodes, p))
    quadrature = cell_quadrature(p)
    dx, dy = _monomial_gradients(quadrature.points, p)
    logger.debug("Cell basis P%d created with %d nodes", p, len(nodes))
    return CellBasis(
        degree=p,
        nodes=nodes,
        coefficients=coefficients,
        quadrature=quadrature,
        quad_values=_monomials(quadrature.points, p) @ coefficients,
        quad_gradients=np.stack([dx @ coefficients, dy @ coefficients], axis=-1),
    )


@lru_cache(maxsize=None)
def _face_basis(p: int) -> FaceBasis:
    check_degree(p)
    nodes = np.linspace(0.0, 1.0, p + 1)
    coefficients = np.linalg.inv(np.power.outer(nodes, np.arange(p + 1)))
    quadrature = face_quadrature(p)
    values = np.power.outer(quadrature.points, np.arange(p + 1)) @ coefficients
    return FaceBasis(
        degree=p,
        nodes=nodes,
        coefficients=coefficients,
        quadrature=quadrature,
        quad_values=values,
        mass=values.T @ (quadrature.weights[:, None] * values),
    )


def eval_cell_basis(basis: CellBasis, points: np.ndarray, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """
    Values (n, size) and reference gradients (n, size, 2) of the shape functions.

    Raises:
        ValueError: If a point lies outside the reference triangle by more than tol.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    outside = (points[:, 0] < -tol) | (points[:, 1] < -tol) | (points.sum(axis=1) > 1.0 + tol)
    if np.any(outside):
        raise ValueError(f"{int(outside.sum())} evaluation points lie outside the reference triangle")
    return basis.values(points), basis.gradients(points)
