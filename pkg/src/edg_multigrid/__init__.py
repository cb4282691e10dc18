"""edg_multigrid: statically condensed EDG for the Poisson problem with a homogeneous V-cycle multigrid."""
import logging

from .edg import CondensedLevel, PenaltyLaw, assemble_level, reconstruct
from .mesh import MeshHierarchy, TriMesh, build_figure1_coarse, build_hierarchy
from .multigrid import MgHierarchy, SmootherConfig, nested_solve, setup_multigrid, solve, v_cycle
from .studies import ExperimentConfig, ResultTable


__all__ = [
    "CondensedLevel",
    "ExperimentConfig",
    "MeshHierarchy",
    "MgHierarchy",
    "PenaltyLaw",
    "ResultTable",
    "SmootherConfig",
    "TriMesh",
    "assemble_level",
    "build_figure1_coarse",
    "build_hierarchy",
    "nested_solve",
    "reconstruct",
    "setup_multigrid",
    "solve",
    "v_cycle",
]

logging.getLogger(__name__).addHandler(logging.NullHandler())
