"""scikit-learn style front end for exemplar lifting."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._parallel import ordered_map
from .evaluation import EvalProtocol, Protocol, mpjpe
from .geometry import Pose2D, Pose3D
from .library import ExemplarLibrary, build_library_arrays
from .matcher import MatchConfig, match
from .refine import RefineConfig
from .skeleton import resolve_skeleton
from .validation import check_camera, check_pose_array
from .warp import lift


class ExemplarLifter(BaseEstimator):
    """Lift 2D keypoints to 3D by matching against a library of 3D exemplars.

    ``fit`` takes either a ready :class:`ExemplarLibrary` or an array of
    camera-frame 3D poses (n_exemplars, n_joints, 3) plus a camera.
    ``predict`` maps 2D poses (n_queries, n_joints, 2) in pixels to 3D
    poses in millimetres.

    Parameters
    ----------
    k : int
        Shortlist size kept from the nearest-neighbour scan.
    sigma : float
        Temperature (pixels) of the posterior weights from ``kneighbors``.
    normalization : {"none", "root-center-scale"}
        Normalisation applied to library projections and queries before matching.
    refine : bool
        Re-fit each shortlist candidate's extrinsics and re-rank.
    warp : bool
        Return warped exemplars (query x/y, exemplar depth) instead of raw ones.
    camera : CameraModel or dict, optional
        Camera for array input to ``fit``.
    skeleton : Skeleton, dict or path, optional
        Joint layout; defaults to the bundled 17-joint skeleton.
    max_iterations, residual_tolerance, damping_init
        Resectioning solver settings.
    n_jobs : int, optional
        Worker threads across queries; falls back to $POSELIFT_THREADS.
    """

    def __init__(self, k=10, sigma=10.0, normalization="none", refine=True, warp=True,
                 camera=None, skeleton=None, max_iterations=50, residual_tolerance=1e-6,
                 damping_init=1e-3, n_jobs=None):
        self.k = k
        self.sigma = sigma
        self.normalization = normalization
        self.refine = refine
        self.warp = warp
        self.camera = camera
        self.skeleton = skeleton
        self.max_iterations = max_iterations
        self.residual_tolerance = residual_tolerance
        self.damping_init = damping_init
        self.n_jobs = n_jobs

    def fit(self, X, y=None, activities=None, subjects=None):
        if isinstance(X, ExemplarLibrary):
            self.library_ = X
        else:
            if self.camera is None:
                raise ValueError("a camera is required when fitting from a pose array")
            skeleton = resolve_skeleton(self.skeleton)
            poses = check_pose_array(X, 3, skeleton.joint_count)
            cam = check_camera(self.camera)
            self.library_ = build_library_arrays(
                skeleton, poses, cam.focal, cam.principal_point, cam.rotation, cam.translation,
                activities, subjects, {"source": "ExemplarLifter.fit"},
            )
        self.skeleton_ = self.library_.skeleton
        self.n_exemplars_ = len(self.library_)
        self.match_config_ = MatchConfig(self.k, self.sigma, self.normalization)
        self.refine_config_ = RefineConfig(self.max_iterations, self.residual_tolerance, self.damping_init)
        return self

    def _queries(self, X):
        check_is_fitted(self, "library_")
        arr = check_pose_array(X, 2, self.skeleton_.joint_count)
        return [Pose2D(a, self.skeleton_) for a in arr]

    def kneighbors(self, X, n_neighbors=None, return_distance=True):
        """Shortlist ids (and squared pixel errors) per query, nearest first."""
        queries = self._queries(X)
        cfg = self.match_config_
        if n_neighbors is not None:
            cfg = MatchConfig(n_neighbors, cfg.sigma, cfg.normalization)
        results = [match(self.library_, q, cfg) for q in queries]
        ids = np.array([r.ids for r in results])
        if not return_distance:
            return ids
        return np.array([r.errors for r in results]), ids

    def lift(self, X) -> list:
        """Full :class:`LiftResult` per query."""
        queries = self._queries(X)
        return ordered_map(
            lambda q: lift(self.library_, q, self.match_config_, self.refine_config_,
                           use_refine=self.refine, use_warp=self.warp, threads=1),
            queries, self.n_jobs,
        )

    def predict(self, X) -> np.ndarray:
        return np.stack([r.prediction.joints for r in self.lift(X)])

    def score(self, X, y, protocol="p1"):
        """Negative mean MPJPE (mm), so that greater is better."""
        preds = self.predict(X)
        gts = check_pose_array(y, 3, self.skeleton_.joint_count, name="y")
        proto = EvalProtocol(Protocol(protocol), self.skeleton_.root_index)
        errs = [mpjpe(Pose3D(p, self.skeleton_), Pose3D(g, self.skeleton_), proto) for p, g in zip(preds, gts)]
        return -float(np.mean(errs))
