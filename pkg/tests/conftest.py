import numpy as np
import pytest

from pathlib import Path

from edg_multigrid.edg import PenaltyLaw, assemble_level
from edg_multigrid.mesh import build_figure1_coarse, build_hierarchy
from edg_multigrid.multigrid import SmootherConfig, setup_multigrid
from edg_multigrid.studies import constant_one

PROJECT_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def project_root():
    return PROJECT_ROOT

@pytest.fixture(scope="session")
def coarse_mesh():
    return build_figure1_coarse()

@pytest.fixture(scope="session")
def meshes(coarse_mesh):
    """Levels 0..3 of the unit square hierarchy."""
    return build_hierarchy(coarse_mesh, 3)

@pytest.fixture(scope="session")
def inv_h():
    return PenaltyLaw("inv_h", 1.0)

@pytest.fixture(scope="session")
def p1_levels(meshes, inv_h):
    return [assemble_level(mesh, 1, inv_h, constant_one) for mesh in meshes.levels]

@pytest.fixture(scope="session")
def p2_levels(meshes, inv_h):
    return [assemble_level(mesh, 2, inv_h, constant_one) for mesh in meshes.levels[:3]]

@pytest.fixture(scope="session")
def mg_p1(meshes, inv_h):
    return setup_multigrid(meshes, 1, inv_h, constant_one, SmootherConfig())

@pytest.fixture(scope="session")
def mg_p2(meshes, inv_h):
    return setup_multigrid(meshes, 2, inv_h, constant_one, SmootherConfig(steps=2))

@pytest.fixture
def rng():
    return np.random.default_rng(1234)
