"""Weak-perspective exemplar warping and the match -> refine -> warp pipeline."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyLibrary, NonPositiveDepth, SkeletonMismatch
from .geometry import CameraModel, Pose2D, Pose3D, check_same_skeleton
from .matcher import MatchConfig, MatchResult, match
from .refine import RefineConfig, refine_shortlist


@dataclass(frozen=True, eq=False)
class WarpedPose:
    pose3d_star: Pose3D
    scale_s: float
    source_exemplar_id: int = -1


def weak_perspective_lift(query_xy, depths, focal, principal_point):
    """Joints ``(s (x - cx), s (y - cy), Z)`` with ``s = mean(Z) / f``."""
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(~(depths > 0)):
        j = int(np.argmax(~(depths > 0)))
        raise NonPositiveDepth(j, float(depths[j]))
    s = float(depths.mean()) / focal
    xy = (np.asarray(query_xy, dtype=np.float64) - np.asarray(principal_point, dtype=np.float64)) * s
    return np.column_stack([xy, depths]), s


def warp_exemplar(exemplar_pose: Pose3D, cam: CameraModel, query: Pose2D, exemplar_id=-1) -> WarpedPose:
    """Keep the exemplar's camera-frame depths, take (X, Y) from the query.

    The exemplar is first moved into the camera frame with ``cam``'s
    extrinsics; the query is made camera-centred by subtracting the
    principal point before scaling.
    """
    check_same_skeleton(exemplar_pose, query)
    Z = cam.to_camera_frame(exemplar_pose.joints)[:, 2]
    joints, s = weak_perspective_lift(query.joints, Z, cam.focal, cam.principal_point)
    return WarpedPose(Pose3D(joints, exemplar_pose.skeleton), s, exemplar_id)


@dataclass(eq=False)
class LiftResult:
    exemplar_id: int
    camera: CameraModel
    pose: Pose3D
    pose_warped: Pose3D | None
    residual: float
    scale: float | None = None
    candidates: tuple = ()
    refined: bool = False
    timings: dict = field(default_factory=dict, repr=False)

    @property
    def prediction(self) -> Pose3D:
        """Warped pose when available, otherwise the unwarped exemplar."""
        return self.pose_warped if self.pose_warped is not None else self.pose

    def to_dict(self) -> dict:
        return {
            "exemplar_id": self.exemplar_id,
            "camera": self.camera.to_dict(),
            "pose": self.pose.joints.tolist(),
            "pose_warped": None if self.pose_warped is None else self.pose_warped.joints.tolist(),
            "scale": self.scale,
            "residual": self.residual,
            "refined": self.refined,
            "candidates": [[int(i), float(e)] for i, e in self.candidates],
        }


def lift(lib, query: Pose2D, match_cfg: MatchConfig | None = None, refine_cfg: RefineConfig | None = None,
         use_refine=True, use_warp=True, threads=None) -> LiftResult:
    """Lift one 2D pose: match, optionally resection the shortlist, optionally warp.

    ``pose`` is the chosen exemplar mapped into the (refined) camera frame,
    ``pose_warped`` the weak-perspective warp of it onto the query.
    """
    if len(lib) == 0:
        raise EmptyLibrary("library is empty")
    if query.skeleton != lib.skeleton:
        raise SkeletonMismatch("query and library skeletons differ")
    timings = {}
    t0 = time.perf_counter()
    shortlist: MatchResult = match(lib, query, match_cfg, threads=threads)
    t1 = time.perf_counter()
    timings["match_ms"] = (t1 - t0) * 1e3
    if use_refine:
        refined = refine_shortlist(lib, query, shortlist, refine_cfg)
        best = refined[0]
        exemplar_id, camera, residual = best.exemplar_id, best.camera_star, best.error_after
        candidates = tuple((c.exemplar_id, c.error_after) for c in refined)
    else:
        exemplar_id, residual = shortlist.candidates[0]
        camera = lib.camera(exemplar_id)
        candidates = shortlist.candidates
    t2 = time.perf_counter()
    timings["refine_ms"] = (t2 - t1) * 1e3
    exemplar = Pose3D(lib.poses[exemplar_id], lib.skeleton)
    pose = Pose3D(camera.to_camera_frame(exemplar.joints), lib.skeleton)
    pose_warped, scale = None, None
    if use_warp:
        w = warp_exemplar(exemplar, camera, query, exemplar_id)
        pose_warped, scale = w.pose3d_star, w.scale_s
    timings["warp_ms"] = (time.perf_counter() - t2) * 1e3
    return LiftResult(exemplar_id, camera, pose, pose_warped, float(residual), scale,
                      candidates, bool(use_refine), timings)
