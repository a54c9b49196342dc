"""Input checks that turn loose array-likes into pose stacks."""
from __future__ import annotations

import numpy as np

from .exceptions import EmptyInput, SkeletonMismatch
from .geometry import CameraModel, Pose2D, Pose3D


def check_pose_array(X, dim, n_joints, name="X") -> np.ndarray:
    """Coerce poses to a float64 array of shape (n_samples, n_joints, dim).

    Accepts a single pose, a stack of poses, a flattened (n_samples,
    n_joints * dim) matrix or a sequence of Pose2D/Pose3D objects.
    """
    if isinstance(X, (Pose2D, Pose3D)):
        X = [X]
    if isinstance(X, (list, tuple)) and not X:
        raise EmptyInput(f"{name} is empty")
    if isinstance(X, (list, tuple)) and isinstance(X[0], (Pose2D, Pose3D)):
        X = np.stack([p.joints for p in X])
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2 and arr.shape == (n_joints, dim):
        arr = arr[None]
    elif arr.ndim == 2 and arr.shape[1] == n_joints * dim:
        arr = arr.reshape(len(arr), n_joints, dim)
    elif arr.ndim == 1 and arr.size == n_joints * dim:
        arr = arr.reshape(1, n_joints, dim)
    if arr.ndim != 3 or arr.shape[1:] != (n_joints, dim):
        raise SkeletonMismatch(f"{name} has shape {np.shape(X)}; expected (n_samples, {n_joints}, {dim})")
    if len(arr) == 0:
        raise EmptyInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinity")
    return arr


def check_camera(camera) -> CameraModel:
    if isinstance(camera, CameraModel):
        return camera
    if isinstance(camera, dict):
        return CameraModel.from_dict(camera)
    raise TypeError(f"expected a CameraModel or camera dict, got {type(camera).__name__}")
