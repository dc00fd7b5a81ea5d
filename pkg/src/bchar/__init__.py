"""Ball-approximated characteristics (B-char) ELLAM for pure advection.

Cells of a Cartesian mesh are approximated by packed balls, the balls are
tracked backward along the flow, and the resulting ball/ball intersection
volumes are rebalanced and minimally adjusted so that the scheme is both
locally and globally mass conserving.
"""

from bchar.mesh import Domain, Mesh, build_mesh, locate_cell
from bchar.balls import BallCloud, ball_intersection_volume, ball_volume, pack_cells
from bchar.flow import VelocityField, TrackedCloud, track_points, track_cloud
from bchar.volume_matrix import VolumeMatrix, build_initial_matrix, rebalance, scaling_iteration
from bchar.optimizer import ConstraintSystem, assemble_constraints, solve_min_norm, apply_adjustment
from bchar.scheme import SchemeConfig, ConcentrationField, advance_step, run, error_norms, project_initial
from bchar.cases import CaseSpec, builtin_case, benchmark_reference, CASE_NAMES

__version__ = "0.1.0"

__all__ = [
    "Domain", "Mesh", "build_mesh", "locate_cell",
    "BallCloud", "ball_intersection_volume", "ball_volume", "pack_cells",
    "VelocityField", "TrackedCloud", "track_points", "track_cloud",
    "VolumeMatrix", "build_initial_matrix", "rebalance", "scaling_iteration",
    "ConstraintSystem", "assemble_constraints", "solve_min_norm", "apply_adjustment",
    "SchemeConfig", "ConcentrationField", "advance_step", "run", "error_norms", "project_initial",
    "CaseSpec", "builtin_case", "benchmark_reference", "CASE_NAMES",
]
