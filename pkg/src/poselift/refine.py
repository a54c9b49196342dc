"""Camera resectioning: re-fit a shortlist candidate's extrinsics to the query.

Intrinsics stay fixed. The solver is a damped Gauss-Newton loop over a
6-vector (axis-angle rotation increment, translation increment); rotation
increments are applied on the left of the current estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import ordered_map
from .exceptions import NonPositiveDepth, SingularNormalEquations
from .geometry import CameraModel, Pose2D, Pose3D, check_same_skeleton, nearest_rotation, rodrigues
from .matcher import MatchResult

_COND_LIMIT = 1e14
_MAX_DAMPING = 1e12


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 50
    residual_tolerance: float = 1e-6
    damping_init: float = 1e-3
    reorthonormalize_every: int = 10

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.residual_tolerance > 0 and self.damping_init > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class RefinedCandidate:
    exemplar_id: int
    camera_star: CameraModel
    error_before: float
    error_after: float
    iterations_used: int
    singular: bool = False


def residuals(points, target, focal, pp, R, t):
    """Pixel residuals (2N,) of projecting world ``points`` against ``target``."""
    cam = points @ R.T + t
    z = cam[:, 2]
    if np.any(~(z > 0)):
        j = int(np.argmax(~(z > 0)))
        raise NonPositiveDepth(j, float(z[j]))
    uv = focal * cam[:, :2] / z[:, None] + pp
    return (uv - target).ravel(), cam


def extrinsic_jacobian(cam_points, rotated, focal):
    """d(pixels)/d(rotation increment, translation), shape (2N, 6).

    ``cam_points`` are the joints in the camera frame (R p + t) and
    ``rotated`` is R p. A left rotation increment w moves a joint by
    ``w x (R p)``, so the rotation gradient of a pixel row g is ``(R p) x g``.
    """
    x, y, z = cam_points[:, 0], cam_points[:, 1], cam_points[:, 2]
    n = len(cam_points)
    inv = focal / z
    du = np.stack([inv, np.zeros(n), -inv * x / z], axis=1)
    dv = np.stack([np.zeros(n), inv, -inv * y / z], axis=1)
    qx, qy, qz = rotated[:, 0], rotated[:, 1], rotated[:, 2]

    def cross_rows(g):
        return np.stack([
            qy * g[:, 2] - qz * g[:, 1],
            qz * g[:, 0] - qx * g[:, 2],
            qx * g[:, 1] - qy * g[:, 0],
        ], axis=1)

    J = np.empty((2 * n, 6))
    J[0::2, :3] = cross_rows(du)
    J[1::2, :3] = cross_rows(dv)
    J[0::2, 3:] = du
    J[1::2, 3:] = dv
    return J


def resection(pose3d: Pose3D, target: Pose2D, init_cam: CameraModel,
              cfg: RefineConfig | None = None, exemplar_id: int = -1) -> RefinedCandidate:
    """Locally minimise the squared reprojection error over the extrinsics.

    Steps that raise the error or put a joint behind the camera are rejected
    and the damping grows tenfold; accepted steps shrink it tenfold. The
    loop ends once an accepted step improves the error by less than
    ``residual_tolerance`` or after ``max_iterations`` trial steps.
    """
    cfg = cfg or RefineConfig()
    check_same_skeleton(pose3d, target)
    P, x = pose3d.joints, target.joints
    f, pp = init_cam.focal, np.asarray(init_cam.principal_point)
    R, t = np.array(init_cam.rotation), np.array(init_cam.translation)
    r, cam = residuals(P, x, f, pp, R, t)
    err = err0 = float(r @ r)
    lam = cfg.damping_init
    it = 0
    accepted = 0
    if err0 > 0.0:
        while it < cfg.max_iterations:
            it += 1
            J = extrinsic_jacobian(cam, cam - t, f)
            A = J.T @ J
            g = J.T @ r
            diag = np.diag(A).copy()
            if np.any(diag <= 0) or np.linalg.cond(A) > _COND_LIMIT:
                return RefinedCandidate(exemplar_id, init_cam, err0, err0, it, singular=True)
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                return RefinedCandidate(exemplar_id, init_cam, err0, err0, it, singular=True)
            R_new = rodrigues(step[:3]) @ R
            t_new = t + step[3:]
            try:
                r_new, cam_new = residuals(P, x, f, pp, R_new, t_new)
                err_new = float(r_new @ r_new)
            except NonPositiveDepth:
                err_new = np.inf
            if err_new < err:
                improvement = err - err_new
                R, t, r, cam, err = R_new, t_new, r_new, cam_new, err_new
                lam = max(lam / 10.0, 1e-15)
                accepted += 1
                if accepted % cfg.reorthonormalize_every == 0:
                    R = nearest_rotation(R)
                    r, cam = residuals(P, x, f, pp, R, t)
                    err = float(r @ r)
                if improvement < cfg.residual_tolerance or err == 0.0:
                    break
            else:
                lam *= 10.0
                if lam > _MAX_DAMPING:
                    break
    R = nearest_rotation(R)
    r_final, _ = residuals(P, x, f, pp, R, t)
    err_final = float(r_final @ r_final)
    if err_final > err0:
        # polar cleanup only moves R by rounding; never report a worse camera
        return RefinedCandidate(exemplar_id, init_cam, err0, err0, it)
    return RefinedCandidate(exemplar_id, init_cam.with_extrinsics(R, t), err0, err_final, it)


def refine_shortlist(lib, query: Pose2D, shortlist: MatchResult,
                     cfg: RefineConfig | None = None, threads=1) -> list:
    """Resection every shortlist candidate and re-sort by refined error, then id."""
    if not len(shortlist):
        raise ValueError("shortlist is empty")
    cfg = cfg or RefineConfig()

    def one(cand):
        i, match_err = cand
        ex = lib[i]
        try:
            return resection(ex.pose3d, query, ex.camera, cfg, exemplar_id=i)
        except (NonPositiveDepth, SingularNormalEquations):
            return RefinedCandidate(i, ex.camera, match_err, match_err, 0, singular=True)

    out = ordered_map(one, shortlist.candidates, threads)
    return sorted(out, key=lambda c: (c.error_after, c.exemplar_id))
