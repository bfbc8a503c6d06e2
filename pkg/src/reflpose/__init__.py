"""Relative pose of reflective objects from pixel, normal and reflection correspondences."""
from .correspondences import CorrespondenceSet, NormalCorr, PixelCorr, ReflectionCorr, center
from .geometry import EulerZXZ, GbrTransform, compose_combined, euler_to_matrix, matrix_to_euler
from .multiview import PoseGraph, integrate_multiview
from .ransac import RansacConfig, ransac_pair
from .residuals import ParamVector, residual_vector, total_objective
from .solvers import (
    PairSolution,
    ambiguity_family,
    decompose_at_eta,
    direct_optimize_all,
    estimate_translation,
    recover_depths,
    rotation_error_deg,
    solve_pair,
    step1_estimate_combined,
    step2_scan_eta,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"
