import dataclasses

import numpy as np
import pytest

from edg_multigrid.edg import PenaltyLaw, assemble_level, skeleton_gram
from edg_multigrid.exceptions import DimensionMismatch, InjectionMismatch
from edg_multigrid.mesh import build_hierarchy
from edg_multigrid.transfer import (
    boundedness_constant,
    build_injection,
    continuous_extension,
    inject,
    restrict,
    weighted_restriction,
)


def linear_trace(mesh, dof_map, vertex_values):
    """Skeleton coefficients of the continuous piecewise linear function with the given vertex values."""
    lam = np.zeros(dof_map.n_dofs)
    interior = dof_map.dof_of_vertex >= 0
    lam[dof_map.dof_of_vertex[interior]] = vertex_values[interior]
    p = dof_map.degree
    for k in range(1, p):
        t = k / p
        dofs = dof_map.dof_of_face_node[:, k - 1]
        valid = dofs >= 0
        lo, hi = mesh.faces[valid].T
        lam[dofs[valid]] = (1 - t) * vertex_values[lo] + t * vertex_values[hi]
    return lam

def random_vertex_values(mesh, rng):
    values = rng.standard_normal(mesh.n_vertices)
    values[mesh.boundary_vertices] = 0.0
    return values

def injection(meshes, levels, level):
    return build_injection(meshes, level, levels[level - 1].dof_map, levels[level].dof_map, levels[level - 1].solvers)


DEEP_LEVELS = 4
SAMPLES = 20


@pytest.fixture(scope="module")
def deep_meshes(coarse_mesh):
    return build_hierarchy(coarse_mesh, DEEP_LEVELS)

@pytest.fixture(scope="module", params=[1, 2, 3])
def deep_levels(request, deep_meshes):
    return [assemble_level(mesh, request.param, PenaltyLaw("const", 1.0), None) for mesh in deep_meshes.levels]


def test_injection_preserves_piecewise_linear_traces(deep_meshes, deep_levels, rng):
    for level in range(1, DEEP_LEVELS + 1):
        coarse = deep_meshes.levels[level - 1]
        fine = deep_meshes.levels[level]
        op = injection(deep_meshes, deep_levels, level)
        for _ in range(SAMPLES):
            vertex_values = random_vertex_values(coarse, rng)
            # linear functions on the coarse cells are linear on every child
            fine_values = np.concatenate([vertex_values, vertex_values[coarse.faces].mean(axis=1)])
            lam_coarse = linear_trace(coarse, deep_levels[level - 1].dof_map, vertex_values)
            lam_fine = linear_trace(fine, deep_levels[level].dof_map, fine_values)
            assert np.abs(inject(op, lam_coarse) - lam_fine).max() <= 1e-11 * max(1.0, np.abs(lam_fine).max())

def test_injection_rows_sum_to_one_away_from_boundary(deep_meshes, deep_levels):
    # every cell of level 0 touches the boundary, so start one level higher
    for level in range(2, DEEP_LEVELS + 1):
        coarse = deep_meshes.levels[level - 1]
        op = injection(deep_meshes, deep_levels, level)
        row_sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        interior_cells = ~coarse.boundary_vertices[coarse.cells].any(axis=1)
        children = deep_meshes.children(level)[interior_cells].ravel()
        dofs = deep_levels[level].dof_map.cell_dofs()[children].ravel()
        dofs = np.unique(dofs[(dofs >= 0) & (dofs < op.shape[0])])
        assert dofs.size > 0
        assert np.allclose(row_sums[dofs], 1.0, atol=1e-11)

def test_p1_injection_rows(meshes, p1_levels):
    op = injection(meshes, p1_levels, 2)
    coarse = meshes.levels[1]
    coarse_dofs = p1_levels[1].dof_map
    fine_dofs = p1_levels[2].dof_map
    matrix = op.matrix.toarray()

    # coarse vertices keep their value
    for v in np.flatnonzero(coarse_dofs.dof_of_vertex >= 0):
        row = matrix[fine_dofs.dof_of_vertex[v]]
        assert np.isclose(row[coarse_dofs.dof_of_vertex[v]], 1.0)
        assert np.isclose(np.abs(row).sum(), 1.0)

    # face midpoints average the two endpoints
    for face, (lo, hi) in enumerate(coarse.faces):
        if coarse.boundary[face]:
            continue
        row = matrix[fine_dofs.dof_of_vertex[coarse.n_vertices + face]]
        expected = np.zeros(coarse_dofs.n_dofs)
        for v in (lo, hi):
            if coarse_dofs.dof_of_vertex[v] >= 0:
                expected[coarse_dofs.dof_of_vertex[v]] = 0.5
        assert np.allclose(row, expected, atol=1e-12)

def test_first_injection_p1(meshes, p1_levels):
    op = injection(meshes, p1_levels, 1)
    assert op.shape == (9, 1)
    weights = np.sort(op.matrix.toarray().ravel())
    assert np.isclose(weights[-1], 1.0)
    assert np.all(weights >= -1e-14)

def test_restriction_is_transpose(meshes, p2_levels, rng):
    op = injection(meshes, p2_levels, 2)
    r = rng.standard_normal(op.shape[0])
    mu = rng.standard_normal(op.shape[1])
    lhs = np.dot(restrict(op, r), mu)
    rhs = np.dot(r, inject(op, mu))
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(r) * np.linalg.norm(mu) * abs(op.matrix).sum()

def test_injection_linearity(meshes, p2_levels, rng):
    op = injection(meshes, p2_levels, 1)
    a = rng.standard_normal(op.shape[1])
    b = rng.standard_normal(op.shape[1])
    assert np.allclose(inject(op, 2.0 * a - 0.5 * b), 2.0 * inject(op, a) - 0.5 * inject(op, b))
    assert np.all(inject(op, np.zeros(op.shape[1])) == 0.0)
    assert np.all(restrict(op, np.zeros(op.shape[0])) == 0.0)

def test_transfer_dimension_mismatch(meshes, p1_levels):
    op = injection(meshes, p1_levels, 1)
    with pytest.raises(DimensionMismatch):
        inject(op, np.ones(2))
    with pytest.raises(DimensionMismatch):
        restrict(op, np.ones(2))

def test_injection_argument_checks(meshes, p1_levels, p2_levels):
    with pytest.raises(ValueError, match="fine level"):
        build_injection(meshes, 0, p1_levels[0].dof_map, p1_levels[0].dof_map, p1_levels[0].solvers)
    with pytest.raises(ValueError, match="Degree mismatch"):
        build_injection(meshes, 1, p1_levels[0].dof_map, p2_levels[1].dof_map, p1_levels[0].solvers)

def test_discontinuous_extension_is_detected(meshes, p2_levels):
    solvers = p2_levels[0].solvers
    flipped = dataclasses.replace(solvers, class_signs=-solvers.class_signs)
    with pytest.raises(InjectionMismatch):
        build_injection(meshes, 1, p2_levels[0].dof_map, p2_levels[1].dof_map, flipped)

def test_p1_extension_is_nodal(p1_levels, rng):
    level = p1_levels[1]
    lam = rng.standard_normal(level.n_dofs)
    values = np.append(lam, 0.0)[level.dof_map.dof_of_vertex]
    nodal = continuous_extension(level, lam)
    assert np.allclose(nodal, values[level.mesh.cells])
    assert np.all(continuous_extension(level, np.zeros(level.n_dofs)) == 0.0)

def test_extension_copies_trace_on_faces(p2_levels, rng):
    level = p2_levels[1]
    lam = rng.standard_normal(level.n_dofs)
    nodal = continuous_extension(level, lam)
    # vertex nodes and the edge midpoint of local edge 0
    values = np.append(lam, 0.0)
    assert np.allclose(nodal[:, :3], values[level.dof_map.dof_of_vertex[level.mesh.cells]])
    assert np.allclose(nodal[:, 3], values[level.dof_map.dof_of_face_node[level.mesh.cell_faces[:, 0], 0]])

def test_boundedness_constant(meshes, p1_levels, p2_levels):
    for levels in (p1_levels, p2_levels):
        for level in range(1, len(levels)):
            op = injection(meshes, levels, level)
            constant = boundedness_constant(op, levels[level], levels[level - 1], samples=20)
            assert np.isfinite(constant) and 0 < constant < 10

def test_weighted_restriction_is_adjoint(meshes, p2_levels, rng):
    op = injection(meshes, p2_levels, 2)
    coarse, fine = p2_levels[1], p2_levels[2]
    coarse_gram = skeleton_gram(coarse.dof_map, coarse.mesh)
    fine_gram = skeleton_gram(fine.dof_map, fine.mesh)
    r = rng.standard_normal(op.shape[0])
    mu = rng.standard_normal(op.shape[1])
    projected = weighted_restriction(op, coarse_gram, fine_gram, r)
    assert projected.shape == (op.shape[1],)
    lhs = projected @ (coarse_gram @ mu)
    rhs = r @ (fine_gram @ inject(op, mu))
    assert abs(lhs - rhs) <= 1e-9 * np.linalg.norm(r) * np.linalg.norm(mu) * abs(fine_gram).max() * op.shape[0]
