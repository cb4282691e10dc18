"""
Embedded discontinuous Galerkin discretization of -div grad u = f, u = 0 on
the boundary, statically condensed onto the continuous skeleton unknown.

Local unknowns per cell (P_p Lagrange basis, n = dim P_p):
    q = (q_x, q_y) coefficients ordered [q_x(0..n-1), q_y(0..n-1)], then u(0..n-1)
Trace slots per cell: 3 faces x (p + 1) face nodes, each face in its
canonical orientation (see mesh module). Vertex values appear in two slots.

The local solver on a cell T reads, for all test functions (p, v),

    (q, p)_T - (u, div p)_T          = -<lam, p.n>_dT
    (div q, v)_T + tau <u, v>_dT     = tau <lam, v>_dT + (f, v)_T

and condensation gives a(lam, mu) = (Q lam, Q mu) + tau <<U lam - lam, U mu - mu>>,
b(mu) = (U mu, f).
"""
import logging

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from edg_multigrid import linalg
from edg_multigrid.basis import CellBasis, FaceBasis, REFERENCE_VERTICES, triangle_rule
from edg_multigrid.exceptions import DimensionMismatch, LocalSolverError, SingularMatrixError
from edg_multigrid.mesh import TriMesh

logger = logging.getLogger(__name__)

Forcing = Callable[[np.ndarray, np.ndarray], np.ndarray]

CHUNK_SIZE = 4096
# Relative rounding of the geometry key used to share local solvers between congruent cells
CLASS_KEY_DECIMALS = 12


def _chunks(n: int, size: int = CHUNK_SIZE) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# Skeleton numbering
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SkeletonDofMap:
    level: int
    degree: int
    n_dofs: int
    dof_of_vertex: np.ndarray     # (nv,) -1 on boundary vertices
    dof_of_face_node: np.ndarray  # (nf, p - 1) -1 on boundary faces
    face_gather: np.ndarray       # (nf, p + 1) dofs along each face, canonical orientation
    cell_gather: np.ndarray       # (nc, 3, p + 1) -1 marks slots constrained to zero
    node_coords: np.ndarray       # (n_dofs, 2)

    @property
    def slots_per_cell(self) -> int:
        return 3 * (self.degree + 1)

    def cell_dofs(self) -> np.ndarray:
        return self.cell_gather.reshape(len(self.cell_gather), -1)

    def local_values(self, lam: np.ndarray) -> np.ndarray:
        """Trace slot values (nc, 3(p+1)) of a skeleton vector, zero on constrained slots."""
        if len(lam) != self.n_dofs:
            raise DimensionMismatch(self.n_dofs, len(lam), "local_values")
        extended = np.append(np.asarray(lam, dtype=float), 0.0)
        return extended[self.cell_dofs()]


def build_dof_map(mesh: TriMesh, p: int) -> SkeletonDofMap:
    """
    Number the continuous P_p trace unknowns that are not on the boundary:
    interior vertices in vertex order first, then the p - 1 inner nodes of
    each interior face in face order.
    """
    if p < 1:
        raise ValueError(f"Degree must be at least 1, got {p}")
    interior_vertices = np.flatnonzero(~mesh.boundary_vertices)
    dof_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
    dof_of_vertex[interior_vertices] = np.arange(len(interior_vertices))

    interior_faces = np.flatnonzero(~mesh.boundary)
    dof_of_face_node = np.full((mesh.n_faces, p - 1), -1, dtype=np.int64)
    n_face_nodes = len(interior_faces) * (p - 1)
    dof_of_face_node[interior_faces] = (
        len(interior_vertices) + np.arange(n_face_nodes).reshape(len(interior_faces), p - 1)
    )
    n_dofs = len(interior_vertices) + n_face_nodes

    face_gather = np.concatenate([
        dof_of_vertex[mesh.faces[:, :1]],
        dof_of_face_node,
        dof_of_vertex[mesh.faces[:, 1:]],
    ], axis=1)

    node_coords = np.empty((n_dofs, 2))
    node_coords[dof_of_vertex[interior_vertices]] = mesh.vertices[interior_vertices]
    if p > 1:
        lo = mesh.vertices[mesh.faces[interior_faces, 0]]
        hi = mesh.vertices[mesh.faces[interior_faces, 1]]
        t = np.arange(1, p) / p
        coords = lo[:, None, :] + t[None, :, None] * (hi - lo)[:, None, :]
        node_coords[dof_of_face_node[interior_faces].ravel()] = coords.reshape(-1, 2)

    logger.info("Skeleton dofs on level [%d], p=%d: %d", mesh.level, p, n_dofs)
    return SkeletonDofMap(
        level=mesh.level,
        degree=p,
        n_dofs=n_dofs,
        dof_of_vertex=dof_of_vertex,
        dof_of_face_node=dof_of_face_node,
        face_gather=face_gather,
        cell_gather=face_gather[mesh.cell_faces],
        node_coords=node_coords,
    )


def interpolate_trace(dof_map: SkeletonDofMap, w: Forcing) -> np.ndarray:
    """Skeleton coefficients of the nodal interpolant of w(x, y)."""
    x = dof_map.node_coords
    return np.asarray(w(x[:, 0], x[:, 1]), dtype=float)


# Reference tables
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ReferenceTables:
    basis: CellBasis
    face: FaceBasis
    mass: np.ndarray         # (n, n)
    grad_mass: np.ndarray    # (2, n, n) int d_l phi_i phi_j
    edge_mass: np.ndarray    # (3, n, n) int_0^1 phi_i phi_j along local edge e
    edge_trace: np.ndarray   # (3, 2, n, p + 1) int_0^1 phi_i psi_j, orientation +1 / -1
    node_edge: np.ndarray    # (3p,) local edge carrying each boundary node
    node_step: np.ndarray    # (3p,) position of the node along its edge traversal

    @property
    def degree(self) -> int:
        return self.basis.degree

    def node_slots(self, signs: np.ndarray) -> np.ndarray:
        """Trace slot of every boundary Lagrange node, (..., 3p) for signs (..., 3)."""
        p = self.degree
        edge_signs = np.take(signs, self.node_edge, axis=-1)
        position = np.where(edge_signs > 0, self.node_step, p - self.node_step)
        return self.node_edge * (p + 1) + position


@lru_cache(maxsize=None)
def reference_tables(p: int) -> ReferenceTables:
    basis = CellBasis.create(p)
    face = FaceBasis.create(p)
    w = basis.quadrature.weights
    phi = basis.quad_values
    dphi = basis.quad_gradients

    mass = phi.T @ (w[:, None] * phi)
    grad_mass = np.einsum("q,qil,qj->lij", w, dphi, phi)

    t = face.quadrature.points
    wf = face.quadrature.weights
    edge_mass = np.empty((3, basis.size, basis.size))
    edge_trace = np.empty((3, 2, basis.size, p + 1))
    for e in range(3):
        a = REFERENCE_VERTICES[(e + 1) % 3]
        b = REFERENCE_VERTICES[(e + 2) % 3]
        for o, s in enumerate((t, 1.0 - t)):
            values = basis.values(a[None, :] + s[:, None] * (b - a)[None, :])
            edge_trace[e, o] = values.T @ (wf[:, None] * face.quad_values)
            if o == 0:
                edge_mass[e] = values.T @ (wf[:, None] * values)

    node_edge = np.array([2, 0, 1] + [e for e in range(3) for _ in range(1, p)])
    node_step = np.array([0, 0, 0] + [k for _ in range(3) for k in range(1, p)])
    return ReferenceTables(
        basis=basis,
        face=face,
        mass=mass,
        grad_mass=grad_mass,
        edge_mass=edge_mass,
        edge_trace=edge_trace,
        node_edge=node_edge,
        node_step=node_step,
    )


# Local solvers
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
class ElementMatrices(NamedTuple):
    """Dense blocks of the mixed local system for a batch of cells."""
    tau: np.ndarray             # (B,)
    flux_mass: np.ndarray       # (B, 2n, 2n) (q, p)_T
    divergence: np.ndarray      # (B, 2n, n) (u, div p)_T
    trace_flux: np.ndarray      # (B, 2n, nT) <lam, p.n>_dT
    trace_mass: np.ndarray      # (B, n, nT) <lam, v>_dT
    boundary_mass: np.ndarray   # (B, n, n) <u, v>_dT
    skeleton_mass: np.ndarray   # (B, nT, nT) <lam, mu>_dT

    @property
    def matrix(self) -> np.ndarray:
        """The (q, u) block of the local system."""
        tau = self.tau[:, None, None]
        top = np.concatenate([self.flux_mass, -self.divergence], axis=2)
        bottom = np.concatenate([np.swapaxes(self.divergence, 1, 2), tau * self.boundary_mass], axis=2)
        return np.concatenate([top, bottom], axis=1)

    @property
    def trace_rhs(self) -> np.ndarray:
        tau = self.tau[:, None, None]
        return np.concatenate([-self.trace_flux, tau * self.trace_mass], axis=1)

    @property
    def load_rhs(self) -> np.ndarray:
        B, n = self.boundary_mass.shape[:2]
        rhs = np.zeros((B, 3 * n, n))
        rhs[:, 2 * n:, :] = np.eye(n)
        return rhs


def element_matrices(
    tables: ReferenceTables,
    inverse: np.ndarray,
    det: np.ndarray,
    lengths: np.ndarray,
    normals: np.ndarray,
    signs: np.ndarray,
    tau: np.ndarray,
    ) -> ElementMatrices:
    """
    Assemble the local blocks for a batch of affine cells.

    Args:
        tables: Reference tables of the polynomial degree
        inverse: (B, 2, 2) inverse Jacobians
        det: (B,) Jacobian determinants
        lengths, normals, signs: (B, 3), (B, 3, 2), (B, 3) local edge data
        tau: (B,) penalty values
    Returns:
        ElementMatrices
    """
    p = tables.degree
    n = tables.basis.size
    B = len(det)
    mass = det[:, None, None] * tables.mass

    flux_mass = np.zeros((B, 2 * n, 2 * n))
    flux_mass[:, :n, :n] = mass
    flux_mass[:, n:, n:] = mass

    # physical d_k phi_i = sum_l inverse[l, k] d_l phi_i
    divergence = det[:, None, None, None] * np.einsum("blk,lij->bkij", inverse, tables.grad_mass)
    divergence = divergence.reshape(B, 2 * n, n)

    orientation = (signs < 0).astype(int)
    trace_mass = np.concatenate([
        lengths[:, e, None, None] * tables.edge_trace[e][orientation[:, e]]
        for e in range(3)
    ], axis=2)
    slot_normals = np.repeat(normals, p + 1, axis=1)  # (B, nT, 2)
    trace_flux = np.concatenate([
        trace_mass * slot_normals[:, None, :, 0],
        trace_mass * slot_normals[:, None, :, 1],
    ], axis=1)

    boundary_mass = np.einsum("be,eij->bij", lengths, tables.edge_mass)
    skeleton_mass = np.zeros((B, 3 * (p + 1), 3 * (p + 1)))
    for e in range(3):
        block = slice(e * (p + 1), (e + 1) * (p + 1))
        skeleton_mass[:, block, block] = lengths[:, e, None, None] * tables.face.mass

    return ElementMatrices(
        tau=np.asarray(tau, dtype=float),
        flux_mass=flux_mass,
        divergence=divergence,
        trace_flux=trace_flux,
        trace_mass=trace_mass,
        boundary_mass=boundary_mass,
        skeleton_mass=skeleton_mass,
    )


def cell_matrices(mesh: TriMesh, p: int, tau, cells: Optional[np.ndarray] = None) -> ElementMatrices:
    """Element matrices of the given cells (all cells by default)."""
    geo = mesh.geometry
    cells = np.arange(mesh.n_cells) if cells is None else np.asarray(cells)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (mesh.n_cells,))[cells]
    return element_matrices(
        reference_tables(p),
        geo.inverse[cells],
        geo.det[cells],
        geo.edge_lengths[cells],
        geo.normals[cells],
        geo.signs[cells],
        tau,
    )


def _condense(m: ElementMatrices, solution: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Split the local solution maps and form the symmetric Schur block."""
    n = m.boundary_mass.shape[1]
    nT = m.trace_mass.shape[2]
    trace_q = solution[:, :2 * n, :nT]
    trace_u = solution[:, 2 * n:, :nT]
    load_q = solution[:, :2 * n, nT:]
    load_u = solution[:, 2 * n:, nT:]

    tau = m.tau[:, None, None]
    cross = np.swapaxes(trace_u, 1, 2) @ m.trace_mass
    schur = (
        np.swapaxes(trace_q, 1, 2) @ m.flux_mass @ trace_q
        + tau * (np.swapaxes(trace_u, 1, 2) @ m.boundary_mass @ trace_u
                 - cross - np.swapaxes(cross, 1, 2) + m.skeleton_mass)
    )
    schur = 0.5 * (schur + np.swapaxes(schur, 1, 2))
    return trace_u, trace_q, load_u, load_q, schur


@dataclass(eq=False)
class CellLocalSystem:
    """
    Mixed local system of one cell together with its solution maps:
    (u, q) = trace_u/trace_q @ lam_local + load_u/load_q @ f_moments.
    """
    cell: int
    tau: float
    matrices: ElementMatrices   # batch of one
    trace_u: np.ndarray
    trace_q: np.ndarray
    load_u: np.ndarray
    load_q: np.ndarray
    schur: np.ndarray
    factorization: linalg.DenseFactorization

    def solve_trace(self, lam_local: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(u, q) for trace data lam_local and f = 0; q is returned as (2, n)."""
        x = linalg.back_solve(self.factorization, self.matrices.trace_rhs[0] @ lam_local)
        n = len(self.trace_u)
        return x[2 * n:], x[:2 * n].reshape(2, n)

    def solve_load(self, moments: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(u, q) for load moments (f, phi_i)_T and lam = 0."""
        x = linalg.back_solve(self.factorization, self.matrices.load_rhs[0] @ moments)
        n = len(self.trace_u)
        return x[2 * n:], x[:2 * n].reshape(2, n)


def build_local_system(mesh: TriMesh, cell: int, basis: CellBasis, tau: float) -> CellLocalSystem:
    """
    Local solver of a single cell, with a reusable factorization of its (q, u) block.

    Raises:
        LocalSolverError: If tau <= 0 or the local block is singular.
    """
    if tau <= 0:
        raise LocalSolverError(cell, f"penalty must be positive, got {tau}")
    m = cell_matrices(mesh, basis.degree, tau, cells=np.array([cell]))
    try:
        fact = linalg.factorize(m.matrix[0])
    except SingularMatrixError as e:
        logger.error("Singular local block on level [%d], cell [%d]", mesh.level, cell)
        raise LocalSolverError(cell, f"singular local block (pivot {e.pivot})") from e
    rhs = np.concatenate([m.trace_rhs, m.load_rhs], axis=2)
    solution = linalg.back_solve(fact, rhs[0])[None]
    trace_u, trace_q, load_u, load_q, schur = (block[0] for block in _condense(m, solution))
    system = CellLocalSystem(
        cell=int(cell),
        tau=float(tau),
        matrices=m,
        trace_u=trace_u,
        trace_q=trace_q,
        load_u=load_u,
        load_q=load_q,
        schur=schur,
        factorization=fact,
    )
    return system


@dataclass(frozen=True, eq=False)
class LocalSystems:
    """
    Local solvers of every cell of a level. Congruent cells with equal
    orientation signs and penalty share one geometry class.
    """
    degree: int
    cell_class: np.ndarray    # (nc,)
    class_cells: np.ndarray   # (ncls,) representative cell of each class
    class_signs: np.ndarray   # (ncls, 3)
    tau: np.ndarray           # (ncls,)
    trace_u: np.ndarray       # (ncls, n, nT)
    trace_q: np.ndarray       # (ncls, 2n, nT)
    load_u: np.ndarray        # (ncls, n, n)
    load_q: np.ndarray        # (ncls, 2n, n)
    schur: np.ndarray         # (ncls, nT, nT)

    @property
    def n_classes(self) -> int:
        return len(self.class_cells)

    @cached_property
    def extension(self) -> np.ndarray:
        """
        (ncls, n, nT) map from trace slots to the nodal values of the
        continuous extension: boundary nodes copy their trace slot, interior
        nodes take the local solution U lam.
        """
        tables = reference_tables(self.degree)
        n = tables.basis.size
        nb = tables.basis.n_boundary_nodes
        ext = np.zeros((self.n_classes, n, self.trace_u.shape[2]))
        slots = tables.node_slots(self.class_signs)
        ext[np.arange(self.n_classes)[:, None], np.arange(nb)[None, :], slots] = 1.0
        ext[:, nb:, :] = self.trace_u[:, nb:, :]
        return ext

    def system(self, mesh: TriMesh, cell: int) -> CellLocalSystem:
        k = self.cell_class[cell]
        m = cell_matrices(mesh, self.degree, self.tau[k], cells=np.array([cell]))
        return CellLocalSystem(
            cell=int(cell),
            tau=float(self.tau[k]),
            matrices=m,
            trace_u=self.trace_u[k],
            trace_q=self.trace_q[k],
            load_u=self.load_u[k],
            load_q=self.load_q[k],
            schur=self.schur[k],
            factorization=linalg.factorize(m.matrix[0]),
        )


def geometry_classes(mesh: TriMesh, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Class index per cell and a representative cell per class."""
    geo = mesh.geometry
    key = np.concatenate([
        np.round(geo.jacobian.reshape(mesh.n_cells, 4) / mesh.h, CLASS_KEY_DECIMALS),
        geo.signs.astype(float),
        np.round(tau / tau.max(), CLASS_KEY_DECIMALS)[:, None],
    ], axis=1) + 0.0
    _, representatives, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return inverse.reshape(-1), representatives


def build_local_systems(mesh: TriMesh, basis: CellBasis, tau) -> LocalSystems:
    """
    Local solvers and Schur blocks for all cells of a mesh.

    Args:
        mesh: Level mesh
        basis: Cell basis of degree p
        tau: Penalty, scalar or one value per cell
    Raises:
        LocalSolverError: If tau <= 0 somewhere or a local block is singular.
    """
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (mesh.n_cells,))
    bad = np.flatnonzero(tau <= 0)
    if bad.size:
        raise LocalSolverError(int(bad[0]), f"penalty must be positive, got {tau[bad[0]]}")

    cell_class, class_cells = geometry_classes(mesh, tau)
    p = basis.degree
    blocks = []
    for sl in _chunks(len(class_cells)):
        cells = class_cells[sl]
        m = cell_matrices(mesh, p, tau, cells=cells)
        rhs = np.concatenate([m.trace_rhs, m.load_rhs], axis=2)
        try:
            solution = np.linalg.solve(m.matrix, rhs)
        except np.linalg.LinAlgError:
            conditions = np.linalg.cond(m.matrix)
            cell = int(cells[np.argmax(conditions)])
            logger.exception("Singular local block on level [%d], cell [%d]", mesh.level, cell)
            raise LocalSolverError(cell, "singular local block") from None
        blocks.append(_condense(m, solution))

    trace_u, trace_q, load_u, load_q, schur = (np.concatenate(parts) for parts in zip(*blocks))
    logger.info(
        "Local solvers on level [%d]: %d cells, %d geometry classes",
        mesh.level, mesh.n_cells, len(class_cells),
    )
    return LocalSystems(
        degree=p,
        cell_class=cell_class,
        class_cells=class_cells,
        class_signs=mesh.cell_face_signs[class_cells],
        tau=tau[class_cells],
        trace_u=trace_u,
        trace_q=trace_q,
        load_u=load_u,
        load_q=load_q,
        schur=schur,
    )


# Penalty
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
PENALTY_LAWS = ("inv_h", "const", "inv_h_cell")


@dataclass(frozen=True)
class PenaltyLaw:
    """tau = coeff / h (inv_h), tau = coeff (const) or tau_T = coeff / h_T (inv_h_cell)."""
    kind: str = "inv_h"
    coeff: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_LAWS:
            raise ValueError(f"Unknown penalty law {self.kind!r}, expected one of {PENALTY_LAWS}")
        if self.coeff <= 0:
            raise ValueError(f"Penalty coefficient must be positive, got {self.coeff}")

    def level_value(self, mesh: TriMesh) -> float:
        return penalty(mesh.h, self.kind, self.coeff)

    def values(self, mesh: TriMesh) -> np.ndarray:
        if self.kind == "inv_h_cell":
            return self.coeff / mesh.geometry.diameters
        return np.full(mesh.n_cells, self.level_value(mesh))


def penalty(h: float, law: str = "inv_h", coeff: float = 1.0) -> float:
    """Level penalty tau for a mesh size h; 'inv_h_cell' evaluates the law at a single cell size."""
    if h <= 0:
        raise ValueError(f"Mesh size must be positive, got {h}")
    law = PenaltyLaw(law, coeff)
    return law.coeff if law.kind == "const" else law.coeff / h


# Condensed system
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CondensedLevel:
    level: int
    mesh: TriMesh
    dof_map: SkeletonDofMap
    solvers: LocalSystems
    A: linalg.SparseMatrix
    b: np.ndarray
    tau: float
    penalty: PenaltyLaw

    @property
    def degree(self) -> int:
        return self.dof_map.degree

    @property
    def n_dofs(self) -> int:
        return self.dof_map.n_dofs


@dataclass(frozen=True, eq=False)
class FieldSolution:
    level: int
    degree: int
    mesh: TriMesh
    skeleton: np.ndarray   # (n_dofs,)
    u: np.ndarray          # (nc, n)
    q: np.ndarray          # (nc, 2, n)


def load_moments(mesh: TriMesh, basis: CellBasis, f: Optional[Forcing]) -> np.ndarray:
    """(f, phi_i)_T for every cell, (nc, n); zero if f is None."""
    if f is None:
        return np.zeros((mesh.n_cells, basis.size))
    geo = mesh.geometry
    rule = basis.quadrature
    points = geo.to_physical(rule.points)
    values = np.asarray(f(points[..., 0], points[..., 1]), dtype=float)
    values = np.broadcast_to(values, points.shape[:2])
    return geo.det[:, None] * ((values * rule.weights) @ basis.quad_values)


def assemble_condensed(
    mesh: TriMesh,
    dof_map: SkeletonDofMap,
    solvers: LocalSystems,
    f: Optional[Forcing],
    penalty: Optional[PenaltyLaw] = None,
    ) -> CondensedLevel:
    """
    Sum the cell Schur blocks into the condensed matrix A and build the load
    b_i = (U mu_i, f) by applying the transposed trace maps to the f-moments.
    """
    n = dof_map.n_dofs
    gather = dof_map.cell_dofs()
    basis = CellBasis.create(dof_map.degree)
    moments = load_moments(mesh, basis, f)

    A = linalg.assemble_csr(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0), (n, n))
    b = np.zeros(n)
    for sl in _chunks(mesh.n_cells, 8 * CHUNK_SIZE):
        g = gather[sl]
        cls = solvers.cell_class[sl]
        blocks = solvers.schur[cls]
        rows = np.broadcast_to(g[:, :, None], blocks.shape)
        cols = np.broadcast_to(g[:, None, :], blocks.shape)
        keep = (rows >= 0) & (cols >= 0)
        A = A + linalg.assemble_csr(rows[keep], cols[keep], blocks[keep], (n, n))

        cell_load = np.einsum("cij,ci->cj", solvers.trace_u[cls], moments[sl])
        valid = g >= 0
        b += np.bincount(g[valid], weights=cell_load[valid], minlength=n)
    A.sort_indices()

    penalty = penalty or PenaltyLaw("const", float(solvers.tau.max()))
    tau = penalty.level_value(mesh)
    logger.info("Condensed level [%d] assembled: %d dofs, %d nonzeros, tau=%.4g", mesh.level, n, A.nnz, tau)
    return CondensedLevel(
        level=mesh.level,
        mesh=mesh,
        dof_map=dof_map,
        solvers=solvers,
        A=A,
        b=b,
        tau=tau,
        penalty=penalty,
    )


def assemble_level(mesh: TriMesh, p: int, penalty: PenaltyLaw, f: Optional[Forcing]) -> CondensedLevel:
    basis = CellBasis.create(p)
    dof_map = build_dof_map(mesh, p)
    solvers = build_local_systems(mesh, basis, penalty.values(mesh))
    return assemble_condensed(mesh, dof_map, solvers, f, penalty)


def reconstruct(level: CondensedLevel, lam: np.ndarray, f: Optional[Forcing]) -> FieldSolution:
    """u = U lam + U f and q = Q lam + Q f, cell by cell."""
    basis = CellBasis.create(level.degree)
    local = level.dof_map.local_values(lam)
    moments = load_moments(level.mesh, basis, f)
    nc, n = moments.shape
    u = np.empty((nc, n))
    q = np.empty((nc, 2 * n))
    solvers = level.solvers
    for sl in _chunks(nc):
        cls = solvers.cell_class[sl]
        u[sl] = np.einsum("cij,cj->ci", solvers.trace_u[cls], local[sl]) \
            + np.einsum("cij,cj->ci", solvers.load_u[cls], moments[sl])
        q[sl] = np.einsum("cij,cj->ci", solvers.trace_q[cls], local[sl]) \
            + np.einsum("cij,cj->ci", solvers.load_q[cls], moments[sl])
    return FieldSolution(
        level=level.level,
        degree=level.degree,
        mesh=level.mesh,
        skeleton=np.asarray(lam, dtype=float),
        u=u,
        q=q.reshape(nc, 2, n),
    )


# Norms
# -----------------------------------------------------------------------------
# -----------------------------------------------------------------------------
def l2_errors(sol: FieldSolution, u_exact: Forcing, q_exact: Callable) -> Tuple[float, float]:
    """
    Broken L2 errors of u and q, with a triangle rule exact for degree 2p + 4.

    Args:
        u_exact: u(x, y)
        q_exact: q(x, y) returning the pair (q_x, q_y)
    """
    basis = CellBasis.create(sol.degree)
    rule = triangle_rule(2 * sol.degree + 4)
    phi = basis.values(rule.points)
    geo = sol.mesh.geometry
    points = geo.to_physical(rule.points)
    x, y = points[..., 0], points[..., 1]

    weights = geo.det[:, None] * rule.weights[None, :]
    du = sol.u @ phi.T - u_exact(x, y)
    qx, qy = q_exact(x, y)
    dqx = sol.q[:, 0, :] @ phi.T - qx
    dqy = sol.q[:, 1, :] @ phi.T - qy
    e_u = float(np.sqrt(np.sum(weights * du ** 2)))
    e_q = float(np.sqrt(np.sum(weights * (dqx ** 2 + dqy ** 2))))
    return e_u, e_q


def eoc(errors: Sequence[float]) -> List[Optional[float]]:
    """log(e_{l-1} / e_l) / log 2 for every level but the first."""
    rates: List[Optional[float]] = [None]
    for coarse, fine in zip(errors[:-1], errors[1:]):
        rates.append(float(np.log(coarse / fine) / np.log(2.0)))
    return rates


def _trace_energies(dof_map: SkeletonDofMap, mesh: TriMesh, lam: np.ndarray) -> np.ndarray:
    """int_dT lam^2 for every cell."""
    p = dof_map.degree
    local = dof_map.local_values(lam).reshape(mesh.n_cells, 3, p + 1)
    face_mass = FaceBasis.create(p).mass
    return np.einsum("cei,ij,cej,ce->c", local, face_mass, local, mesh.geometry.edge_lengths)


def weighted_skeleton_norm(dof_map: SkeletonDofMap, mesh: TriMesh, lam: np.ndarray) -> float:
    """||lam||_l with ||lam||^2 = sum_T |T| / |dT| int_dT lam^2."""
    geo = mesh.geometry
    energies = _trace_energies(dof_map, mesh, lam)
    return float(np.sqrt(np.sum(geo.areas / geo.perimeters * energies)))


def skeleton_norm(dof_map: SkeletonDofMap, mesh: TriMesh, lam: np.ndarray) -> float:
    """|||lam|||_l with |||lam|||^2 = sum_T int_dT lam^2."""
    return float(np.sqrt(np.sum(_trace_energies(dof_map, mesh, lam))))


def skeleton_gram(dof_map: SkeletonDofMap, mesh: TriMesh, weighted: bool = True) -> linalg.SparseMatrix:
    """Gram matrix of the weighted (or unweighted) skeleton inner product."""
    p = dof_map.degree
    geo = mesh.geometry
    scale = geo.areas / geo.perimeters if weighted else np.ones(mesh.n_cells)
    face_mass = FaceBasis.create(p).mass
    blocks = (scale[:, None] * geo.edge_lengths)[:, :, None, None] * face_mass
    g = dof_map.cell_gather
    rows = np.broadcast_to(g[:, :, :, None], blocks.shape)
    cols = np.broadcast_to(g[:, :, None, :], blocks.shape)
    keep = (rows >= 0) & (cols >= 0)
    n = dof_map.n_dofs
    return linalg.assemble_csr(rows[keep], cols[keep], blocks[keep], (n, n))
