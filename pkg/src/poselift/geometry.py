"""Pose and camera types plus the pinhole projection they share.

3D coordinates are millimetres in the camera frame, 2D coordinates are
pixels. All arrays held by the types below are copied and made read-only
on construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonPositiveDepth, SkeletonMismatch
from .skeleton import Skeleton, default_skeleton

ROTATION_TOL = 1e-9


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinates")
    arr.setflags(write=False)
    return arr


class _Pose:
    dim = 0

    def __init__(self, joints, skeleton: Skeleton | None = None):
        skeleton = skeleton or default_skeleton()
        joints = np.asarray(joints, dtype=np.float64)
        if joints.ndim == 1 and joints.size == skeleton.joint_count * self.dim:
            joints = joints.reshape(-1, self.dim)
        if joints.shape != (skeleton.joint_count, self.dim):
            raise SkeletonMismatch(
                f"{type(self).__name__} needs shape ({skeleton.joint_count}, {self.dim}), got {joints.shape}"
            )
        self.joints = _frozen(joints)
        self.skeleton = skeleton

    def __len__(self):
        return len(self.joints)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.skeleton == other.skeleton and np.array_equal(self.joints, other.joints)

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}({self.skeleton.name}, {len(self)} joints)"


class Pose3D(_Pose):
    """N joints ``(X, Y, Z)`` in millimetres."""

    dim = 3


class Pose2D(_Pose):
    """N joints ``(x, y)`` in pixels."""

    dim = 2


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera: focal length and principal point in pixels, rotation
    matrix and translation (mm) mapping world points into the camera frame."""

    focal: float
    principal_point: tuple = (0.0, 0.0)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        focal = float(self.focal)
        if not np.isfinite(focal) or focal <= 0:
            raise ValueError(f"focal length must be positive, got {focal}")
        cx, cy = (float(v) for v in self.principal_point)
        R = _frozen(self.rotation, (3, 3))
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "focal", focal)
        object.__setattr__(self, "principal_point", (cx, cy))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @property
    def cx(self) -> float:
        return self.principal_point[0]

    @property
    def cy(self) -> float:
        return self.principal_point[1]

    def with_extrinsics(self, rotation, translation) -> "CameraModel":
        return CameraModel(self.focal, self.principal_point, rotation, translation)

    def to_camera_frame(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "cx": self.cx,
            "cy": self.cy,
            "R": [float(v) for v in self.rotation.ravel()],
            "t": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        R = np.asarray(d.get("R", np.eye(3).ravel()), dtype=np.float64).reshape(3, 3)
        t = np.asarray(d.get("t", np.zeros(3)), dtype=np.float64)
        return cls(float(d["focal"]), (float(d.get("cx", 0.0)), float(d.get("cy", 0.0))), R, t)

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.focal == other.focal
            and self.principal_point == other.principal_point
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


def project_points(points: np.ndarray, focal, principal_point, rotation, translation) -> np.ndarray:
    """Perspective projection of ``(..., N, 3)`` points; raises on z <= 0."""
    cam = np.asarray(points, dtype=np.float64) @ np.asarray(rotation).T + np.asarray(translation)
    z = cam[..., 2]
    bad = ~(z > 0)
    if np.any(bad):
        flat = np.argwhere(bad)[0]
        joint = int(flat[-1])
        raise NonPositiveDepth(joint, float(z[tuple(flat)]))
    uv = focal * cam[..., :2] / z[..., None]
    return uv + np.asarray(principal_point, dtype=np.float64)


def project(pose: Pose3D, cam: CameraModel) -> Pose2D:
    uv = project_points(pose.joints, cam.focal, cam.principal_point, cam.rotation, cam.translation)
    return Pose2D(uv, pose.skeleton)


def check_same_skeleton(a, b):
    if a.skeleton != b.skeleton:
        raise SkeletonMismatch(f"skeleton {a.skeleton.name} != {b.skeleton.name}")


def row_sum_squares(diff: np.ndarray) -> np.ndarray:
    """Sum of squares of each row of a 2D array.

    Shared by :func:`reprojection_error` and the matcher so both reduce in
    the same order and agree to the last bit.
    """
    return np.sum(diff * diff, axis=-1)


def reprojection_error(a: Pose2D, b: Pose2D) -> float:
    """Sum over joints of squared pixel distance."""
    check_same_skeleton(a, b)
    d = (a.joints - b.joints).reshape(1, -1)
    return float(row_sum_squares(d)[0])


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrix for an axis-angle vector."""
    w = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthonormal polar factor of ``M`` with determinant +1."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle (radians) of rotation ``R``."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))
