import numpy as np
import pytest
import scipy.sparse as sp

from scipy.sparse.linalg import spsolve

from edg_multigrid.exceptions import ConfigurationError, DimensionMismatch, ZeroDiagonal
from edg_multigrid.multigrid import (
    Smoother,
    SmootherConfig,
    SmootherKind,
    build_mg_hierarchy,
    condition_number,
    estimate_extreme_eigenvalues,
    nested_solve,
    smooth,
    solve,
    v_cycle,
)


def rebuild(hier, smoother):
    """Same levels and transfers with another smoother."""
    levels = [level.condensed for level in hier.levels]
    transfers = [level.transfer for level in hier.levels[1:]]
    return build_mg_hierarchy(levels, transfers, smoother)

def energy(A, e):
    return float(e @ (A @ e))


@pytest.fixture(scope="module")
def mg_jacobi(mg_p1):
    return rebuild(mg_p1, SmootherConfig(kind="jacobi", steps=2, damping=0.7))

@pytest.fixture(scope="module")
def mg_sgs(mg_p1):
    return rebuild(mg_p1, SmootherConfig(kind="sgs"))


@pytest.mark.parametrize("settings", [
    {"kind": "sor"},
    {"steps": 0},
    {"steps": 1.5},
    {"damping": 0.0},
    {"damping": 1.2},
])
def test_invalid_smoother_config(settings):
    with pytest.raises(ConfigurationError):
        SmootherConfig(**settings)

def test_smoother_config_accepts_strings():
    assert SmootherConfig(kind="jacobi").kind is SmootherKind.JACOBI
    assert SmootherConfig(kind="sgs").kind is SmootherKind.SYMMETRIC_GAUSS_SEIDEL
    assert SmootherConfig().kind is SmootherKind.GAUSS_SEIDEL

def test_zero_diagonal():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 2.0]]))
    with pytest.raises(ZeroDiagonal) as excinfo:
        Smoother(A, SmootherConfig())
    assert excinfo.value.row == 0

@pytest.mark.parametrize("step", [1, 2])
def test_solution_is_smoother_fixed_point(mg_p1, step):
    level = mg_p1.levels[3]
    x = spsolve(level.A.tocsc(), level.b)
    assert np.allclose(smooth(level, x, level.b, step), x, rtol=1e-10, atol=1e-12)

def test_single_unknown_smoothing_is_exact(mg_p1):
    level = mg_p1.levels[0]
    assert level.n_dofs == 1
    x = smooth(level, np.array([3.0]), level.b, 1)
    assert np.allclose(x, level.b / level.A[0, 0], rtol=1e-14)

def test_forward_and_backward_sweeps(mg_p1, rng):
    level = mg_p1.levels[2]
    A = level.A.toarray()
    r = rng.standard_normal(level.n_dofs)
    assert np.allclose(level.smoother.correction(r, 1), np.linalg.solve(np.tril(A), r))
    assert np.allclose(level.smoother.correction(r, 2), np.linalg.solve(np.triu(A), r))

def test_jacobi_correction(mg_jacobi, rng):
    level = mg_jacobi.levels[2]
    r = rng.standard_normal(level.n_dofs)
    assert np.allclose(level.smoother.correction(r, 1), 0.7 * r / level.A.diagonal())

def test_symmetric_gauss_seidel_correction(mg_sgs, rng):
    level = mg_sgs.levels[2]
    A = level.A.toarray()
    r = rng.standard_normal(level.n_dofs)
    forward = np.linalg.solve(np.tril(A), r)
    expected = forward + np.linalg.solve(np.triu(A), r - A @ forward)
    assert np.allclose(level.smoother.correction(r, 1), expected)
    assert np.allclose(level.smoother.correction(r, 2), expected)
    # one symmetric step equals a forward sweep followed by a backward sweep
    x = rng.standard_normal(level.n_dofs)
    half = x + np.linalg.solve(np.tril(A), level.b - A @ x)
    full = half + np.linalg.solve(np.triu(A), level.b - A @ half)
    assert np.allclose(smooth(level, x, level.b, 1), full)

def test_symmetric_smoother_needs_fewer_cycles(mg_p1, mg_sgs):
    _, single = solve(mg_p1, 3, mg_p1.levels[3].b, tol=1e-8)
    _, symmetric = solve(mg_sgs, 3, mg_sgs.levels[3].b, tol=1e-8)
    assert symmetric.converged
    assert symmetric.iterations <= single.iterations

def test_symmetric_sweep_reduces_energy_error(mg_p1, rng):
    level = mg_p1.levels[3]
    x_star = spsolve(level.A.tocsc(), level.b)
    x = rng.standard_normal(level.n_dofs)
    before = energy(level.A, x - x_star)
    x = smooth(level, smooth(level, x, level.b, 1), level.b, 2)
    assert energy(level.A, x - x_star) < before

def test_coarse_cycle_is_direct_solve(mg_p2, rng):
    A0 = mg_p2.levels[0].A.toarray()
    mu = rng.standard_normal(len(A0))
    assert np.allclose(A0 @ v_cycle(mg_p2, 0, mu), mu, atol=1e-12)

@pytest.mark.parametrize("fixture", ["mg_p1", "mg_p2", "mg_jacobi", "mg_sgs"])
def test_v_cycle_linear_and_symmetric(request, rng, fixture):
    hier = request.getfixturevalue(fixture)
    n = hier.levels[3].n_dofs
    a, b = rng.standard_normal((2, n))
    Ba, Bb = v_cycle(hier, 3, a), v_cycle(hier, 3, b)
    combined = v_cycle(hier, 3, 1.5 * a - 2.0 * b)
    assert np.linalg.norm(combined - (1.5 * Ba - 2.0 * Bb)) <= 1e-10 * np.linalg.norm(combined)
    assert abs(Ba @ b - a @ Bb) <= 1e-10 * np.linalg.norm(Ba) * np.linalg.norm(b)
    assert np.all(v_cycle(hier, 3, np.zeros(n)) == 0.0)

def test_v_cycle_is_positive_definite(mg_p1, rng):
    for _ in range(5):
        mu = rng.standard_normal(mg_p1.levels[2].n_dofs)
        assert mu @ v_cycle(mg_p1, 2, mu) > 0

def test_solve_zero_rhs(mg_p1):
    x, report = solve(mg_p1, 2, np.zeros(mg_p1.levels[2].n_dofs))
    assert report.iterations == 0
    assert report.converged
    assert report.residual_history == []
    assert np.all(x == 0.0)

def test_solve_matches_direct_solver(mg_p2):
    level = mg_p2.levels[3]
    x, report = solve(mg_p2, 3, level.b, tol=1e-10)
    direct = spsolve(level.A.tocsc(), level.b)
    assert report.converged
    assert len(report.residual_history) == report.iterations
    assert report.residual_history[-1] < 1e-10
    assert np.linalg.norm(x - direct) <= 1e-8 * np.linalg.norm(direct)

def test_solve_residuals_decrease(mg_p1):
    _, report = solve(mg_p1, 3, mg_p1.levels[3].b, tol=1e-8)
    history = np.array([report.initial_residual] + report.residual_history)
    assert np.all(np.diff(history) < 0)
    assert report.iterations < 30

def test_solve_iteration_cap(mg_p1):
    x, report = solve(mg_p1, 3, mg_p1.levels[3].b, tol=1e-30, max_iterations=2)
    assert not report.converged
    assert report.iterations == 2
    assert len(report.residual_history) == 2

def test_solve_rejects_nonpositive_tolerance(mg_p1):
    with pytest.raises(ValueError, match="Tolerance"):
        solve(mg_p1, 1, mg_p1.levels[1].b, tol=0.0)

def test_nested_solve_coarse_only(mg_p1):
    results = nested_solve(mg_p1, 0)
    assert len(results) == 1
    x, report = results[0]
    assert report.iterations == 0 and report.converged
    assert np.allclose(mg_p1.levels[0].A @ x, mg_p1.levels[0].b)

def test_nested_solve_iterations_bounded(mg_p1, mg_p2):
    for hier in (mg_p1, mg_p2):
        results = nested_solve(hier)
        assert len(results) == hier.n_levels
        counts = [report.iterations for _, report in results[1:]]
        assert all(report.converged for _, report in results)
        assert all(1 <= count <= 15 for count in counts)
        assert max(counts) - min(counts) <= 2

def test_nested_solve_level_out_of_range(mg_p1):
    with pytest.raises(ValueError, match="outside hierarchy"):
        nested_solve(mg_p1, 4)

def test_hierarchy_shape_checks(mg_p1):
    levels = [level.condensed for level in mg_p1.levels]
    transfers = [level.transfer for level in mg_p1.levels[1:]]
    with pytest.raises(DimensionMismatch):
        build_mg_hierarchy(levels, transfers[:-1], SmootherConfig())
    with pytest.raises(DimensionMismatch):
        build_mg_hierarchy(levels, transfers[::-1], SmootherConfig())

def test_extreme_eigenvalues(mg_p1):
    coarse = mg_p1.levels[0].condensed
    low, high = estimate_extreme_eigenvalues(coarse)
    assert np.isclose(low, coarse.A[0, 0]) and np.isclose(high, coarse.A[0, 0])

    fine = mg_p1.levels[3].condensed
    dense = estimate_extreme_eigenvalues(fine)
    lanczos = estimate_extreme_eigenvalues(fine, dense_limit=0)
    assert 0 < dense[0] < dense[1]
    assert np.allclose(lanczos, dense, rtol=1e-6)
    assert condition_number(fine) > 1
