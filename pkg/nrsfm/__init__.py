"""
Template-less reconstruction and self-calibration of deforming surfaces.

Reconstructs isometrically deforming surfaces from monocular point tracks
by depth maximization under cone constraints, moves reconstructions
between camera intrinsics in closed form, calibrates the camera with or
without a shape template, and grows reconstructions by points and views.
"""
import sys
from pathlib import Path

# Modules import each other by bare name
_here = str(Path(__file__).parent)
if _here not in sys.path:
    sys.path.insert(0, _here)

from camera import IAC, Intrinsics, intrinsics_from_iac, upgraded_distance  # noqa: E402
from tracks import DepthField, Reconstruction, TrackSet  # noqa: E402
from graph import EdgeLengths, NeighborGraph, build_neighbor_graph, geodesics  # noqa: E402
from conic import ConicProgram, SolverResult, SolverStatus, solve, solve_backend  # noqa: E402
from reconstruct import NrsfmProblem, SfTProblem, reconstruct_nrsfm, reconstruct_sft  # noqa: E402
from upgrade import UpgradeContext, normalize_view_scales, upgrade, upgrade_depths  # noqa: E402
from calib_template import calibrate_with_template, gamma_from_pair, solve_iac_minimal  # noqa: E402
from calib_templateless import calibrate_without_template, isometry_consistency, refine_focal  # noqa: E402
from incremental import AugmentProblem, add_points, add_views, densify, self_template  # noqa: E402
from synth import evaluate, generate_cylinder_bend, generate_hinge_fold, generate_scene  # noqa: E402
from config import RunConfig, SolverConfig, setup_logging  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    # Data structures
    "Intrinsics",
    "IAC",
    "TrackSet",
    "DepthField",
    "Reconstruction",
    "NeighborGraph",
    "EdgeLengths",
    "ConicProgram",
    "SolverResult",
    "SolverStatus",
    # Geometry
    "build_neighbor_graph",
    "geodesics",
    "intrinsics_from_iac",
    "upgraded_distance",
    # Solver
    "solve",
    "solve_backend",
    # Reconstruction
    "SfTProblem",
    "NrsfmProblem",
    "reconstruct_sft",
    "reconstruct_nrsfm",
    "UpgradeContext",
    "upgrade_depths",
    "upgrade",
    "normalize_view_scales",
    # Calibration
    "gamma_from_pair",
    "solve_iac_minimal",
    "calibrate_with_template",
    "isometry_consistency",
    "refine_focal",
    "calibrate_without_template",
    # Incremental
    "AugmentProblem",
    "add_points",
    "self_template",
    "add_views",
    "densify",
    # Synthetic data
    "generate_cylinder_bend",
    "generate_hinge_fold",
    "generate_scene",
    "evaluate",
    # Configuration
    "RunConfig",
    "SolverConfig",
    "setup_logging",
]
