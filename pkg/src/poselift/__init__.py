"""Exemplar-based 3D human pose lifting from 2D keypoints."""
from .estimator import ExemplarLifter
from .evaluation import (
    EvalProtocol,
    EvalReport,
    Protocol,
    evaluate,
    mpjpe,
    oracle_best_exemplar,
    procrustes_align,
    upper_bound_gt_depth,
)
from .exceptions import *  # noqa: F401,F403
from .geometry import CameraModel, Pose2D, Pose3D, project, reprojection_error
from .library import Exemplar, ExemplarLibrary, augment_cameras, build_library, load, save, subsample
from .matcher import MatchConfig, MatchResult, Normalization, match, normalize, posterior_weights
from .refine import RefineConfig, RefinedCandidate, refine_shortlist, resection
from .skeleton import Skeleton, default_skeleton, load_skeleton
from .synth import SynthConfig, generate, paper_shape_preset
from .warp import LiftResult, WarpedPose, lift, warp_exemplar

__version__ = "0.1.0"
