"""Deterministic synthetic poses from forward kinematics.

Poses are sampled per activity regime: each regime gives Euler-angle ranges
for the bones it moves, everything else stays at the rest pose. Bodies are
then yawed about the vertical (camera y) axis and placed in front of the
camera, so library entries use identity extrinsics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigInvalid
from .geometry import CameraModel, Pose2D, Pose3D, project_points
from .library import build_library_arrays, write_camera_json, write_pose_csv
from .skeleton import Skeleton, default_skeleton

# child joint -> (rest direction in the parent frame, bone length in mm); y points down
H36M_BONES = {
    "right_hip": ((-1, 0, 0), 132.0),
    "right_knee": ((0, 1, 0), 442.0),
    "right_ankle": ((0, 1, 0), 454.0),
    "left_hip": ((1, 0, 0), 132.0),
    "left_knee": ((0, 1, 0), 442.0),
    "left_ankle": ((0, 1, 0), 454.0),
    "spine": ((0, -1, 0), 233.0),
    "thorax": ((0, -1, 0), 257.0),
    "neck": ((0, -1, 0), 121.0),
    "head": ((0, -1, 0), 115.0),
    "left_shoulder": ((1, 0, 0), 151.0),
    "left_elbow": ((0, 1, 0), 278.0),
    "left_wrist": ((0, 1, 0), 251.0),
    "right_shoulder": ((-1, 0, 0), 151.0),
    "right_elbow": ((0, 1, 0), 278.0),
    "right_wrist": ((0, 1, 0), 251.0),
}

_COMMON = {
    "neck": ((-0.2, 0.3), (-0.4, 0.4), (-0.2, 0.2)),
    "head": ((-0.3, 0.3), (-0.3, 0.3), (-0.2, 0.2)),
    "left_shoulder": ((-0.1, 0.1), (-0.1, 0.1), (-0.15, 0.1)),
    "right_shoulder": ((-0.1, 0.1), (-0.1, 0.1), (-0.1, 0.15)),
}

# activity -> child joint -> ((x lo, x hi), (y lo, y hi), (z lo, z hi)) in radians
H36M_REGIMES = {
    "standing": {
        **_COMMON,
        "right_knee": ((-0.3, 0.2), (-0.2, 0.2), (-0.15, 0.1)),
        "left_knee": ((-0.3, 0.2), (-0.2, 0.2), (-0.1, 0.15)),
        "right_ankle": ((0.0, 0.3), (0, 0), (0, 0)),
        "left_ankle": ((0.0, 0.3), (0, 0), (0, 0)),
        "spine": ((-0.1, 0.2), (-0.2, 0.2), (-0.1, 0.1)),
        "thorax": ((-0.1, 0.1), (-0.2, 0.2), (-0.1, 0.1)),
        "left_elbow": ((-0.6, 0.6), (-0.3, 0.3), (-0.5, 0.05)),
        "right_elbow": ((-0.6, 0.6), (-0.3, 0.3), (-0.05, 0.5)),
        "left_wrist": ((-1.6, 0.0), (0, 0), (0, 0)),
        "right_wrist": ((-1.6, 0.0), (0, 0), (0, 0)),
    },
    "walking": {
        **_COMMON,
        "right_knee": ((-0.7, 0.4), (-0.2, 0.2), (-0.15, 0.1)),
        "left_knee": ((-0.7, 0.4), (-0.2, 0.2), (-0.1, 0.15)),
        "right_ankle": ((0.0, 1.1), (0, 0), (0, 0)),
        "left_ankle": ((0.0, 1.1), (0, 0), (0, 0)),
        "spine": ((-0.05, 0.25), (-0.3, 0.3), (-0.1, 0.1)),
        "thorax": ((-0.1, 0.1), (-0.2, 0.2), (-0.1, 0.1)),
        "left_elbow": ((-0.7, 0.7), (-0.2, 0.2), (-0.3, 0.05)),
        "right_elbow": ((-0.7, 0.7), (-0.2, 0.2), (-0.05, 0.3)),
        "left_wrist": ((-1.0, 0.0), (0, 0), (0, 0)),
        "right_wrist": ((-1.0, 0.0), (0, 0), (0, 0)),
    },
    "sitting": {
        **_COMMON,
        "right_knee": ((-1.8, -1.2), (-0.3, 0.3), (-0.3, 0.1)),
        "left_knee": ((-1.8, -1.2), (-0.3, 0.3), (-0.1, 0.3)),
        "right_ankle": ((1.1, 1.9), (0, 0), (0, 0)),
        "left_ankle": ((1.1, 1.9), (0, 0), (0, 0)),
        "spine": ((-0.3, 0.4), (-0.3, 0.3), (-0.15, 0.15)),
        "thorax": ((-0.2, 0.2), (-0.2, 0.2), (-0.1, 0.1)),
        "left_elbow": ((-1.2, 0.3), (-0.3, 0.3), (-0.6, 0.05)),
        "right_elbow": ((-1.2, 0.3), (-0.3, 0.3), (-0.05, 0.6)),
        "left_wrist": ((-2.0, 0.0), (0, 0), (0, 0)),
        "right_wrist": ((-2.0, 0.0), (0, 0), (0, 0)),
    },
    "reaching": {
        **_COMMON,
        "right_knee": ((-0.5, 0.3), (-0.2, 0.2), (-0.3, 0.1)),
        "left_knee": ((-0.5, 0.3), (-0.2, 0.2), (-0.1, 0.3)),
        "right_ankle": ((0.0, 0.8), (0, 0), (0, 0)),
        "left_ankle": ((0.0, 0.8), (0, 0), (0, 0)),
        "spine": ((-0.2, 0.7), (-0.5, 0.5), (-0.3, 0.3)),
        "thorax": ((-0.2, 0.2), (-0.3, 0.3), (-0.15, 0.15)),
        "left_elbow": ((-2.8, 0.6), (-0.5, 0.5), (-1.6, 0.1)),
        "right_elbow": ((-2.8, 0.6), (-0.5, 0.5), (-0.1, 1.6)),
        "left_wrist": ((-2.2, 0.0), (0, 0), (0, 0)),
        "right_wrist": ((-2.2, 0.0), (0, 0), (0, 0)),
    },
}

DEFAULT_CAMERA = CameraModel(1150.0, (500.0, 500.0))


def _regime_array(skeleton, ranges):
    """(E, 3, 2) angle bounds per edge in ``skeleton.edges`` order."""
    out = np.zeros((len(skeleton.edges), 3, 2))
    names = skeleton.joint_names
    for e, (_, c) in enumerate(skeleton.edges):
        if names[c] in ranges:
            out[e] = np.asarray(ranges[names[c]], dtype=np.float64)
    return out


@dataclass(frozen=True, eq=False)
class SynthConfig:
    seed: int = 0
    skeleton: Skeleton = field(default_factory=default_skeleton)
    bone_lengths: tuple | None = None
    rest_directions: tuple | None = None
    joint_angle_ranges: dict | None = None
    camera: CameraModel = DEFAULT_CAMERA
    subject_distance_range: tuple = (4500.0, 5500.0)
    lateral_range: tuple = (400.0, 200.0)
    yaw_range: tuple = (-math.pi, math.pi)
    pose_count: int = 2500
    query_count: int = 500
    noise_sigma_2d: float = 5.0

    def __post_init__(self):
        sk = self.skeleton
        names = sk.joint_names
        if self.bone_lengths is None or self.rest_directions is None:
            try:
                bones = [H36M_BONES[names[c]] for _, c in sk.edges]
            except KeyError as exc:
                raise ConfigInvalid(f"no default bone for joint {exc}; pass bone_lengths and rest_directions")
            if self.bone_lengths is None:
                object.__setattr__(self, "bone_lengths", tuple(b[1] for b in bones))
            if self.rest_directions is None:
                object.__setattr__(self, "rest_directions", tuple(b[0] for b in bones))
        if self.joint_angle_ranges is None:
            object.__setattr__(self, "joint_angle_ranges", H36M_REGIMES)
        object.__setattr__(self, "bone_lengths", tuple(float(b) for b in self.bone_lengths))
        if len(self.bone_lengths) != len(sk.edges) or len(self.rest_directions) != len(sk.edges):
            raise ConfigInvalid("one bone length and rest direction per edge required")
        if not all(b > 0 for b in self.bone_lengths):
            raise ConfigInvalid("bone lengths must be positive")
        if not self.joint_angle_ranges:
            raise ConfigInvalid("at least one activity regime required")
        for name, ranges in self.joint_angle_ranges.items():
            arr = _regime_array(sk, ranges)
            if np.any(arr[..., 0] > arr[..., 1]):
                raise ConfigInvalid(f"regime {name}: angle lower bound above upper bound")
        lo, hi = self.subject_distance_range
        reach = sum(self.bone_lengths)
        if not 0 < lo <= hi:
            raise ConfigInvalid("subject distance range must be positive and ordered")
        if lo <= reach:
            raise ConfigInvalid(f"closest subject distance {lo} mm must exceed the skeleton reach {reach:.0f} mm")
        if not 0 <= self.query_count < self.pose_count:
            raise ConfigInvalid("need 0 <= query_count < pose_count")
        if self.noise_sigma_2d < 0:
            raise ConfigInvalid("noise sigma must be non-negative")

    @property
    def library_count(self) -> int:
        return self.pose_count - self.query_count

    @property
    def activities(self) -> list:
        return sorted(self.joint_angle_ranges)


def paper_shape_preset(seed=0, **overrides) -> SynthConfig:
    """17 joints, 200k library poses, 500 queries, f = 1150 px, ~5 m away."""
    kw = dict(seed=seed, pose_count=200_500, query_count=500, noise_sigma_2d=5.0)
    kw.update(overrides)
    return SynthConfig(**kw)


def _euler(angles):
    """Batched R = Rz Ry Rx for angles of shape (M, 3)."""
    cx, cy, cz = np.cos(angles).T
    sx, sy, sz = np.sin(angles).T
    R = np.empty((len(angles), 3, 3))
    R[:, 0, 0] = cz * cy
    R[:, 0, 1] = cz * sy * sx - sz * cx
    R[:, 0, 2] = cz * sy * cx + sz * sx
    R[:, 1, 0] = sz * cy
    R[:, 1, 1] = sz * sy * sx + cz * cx
    R[:, 1, 2] = sz * sy * cx - cz * sx
    R[:, 2, 0] = -sy
    R[:, 2, 1] = cy * sx
    R[:, 2, 2] = cy * cx
    return R


def forward_kinematics(skeleton, bone_lengths, rest_directions, angles, root_rotation=None):
    """Joint positions (M, N, 3) relative to the root.

    ``angles`` has shape (M, E, 3): Euler angles per edge in
    ``skeleton.edges`` order. Each bone is rotated by its own angles on top
    of its parent's accumulated rotation.
    """
    m = angles.shape[0]
    n = skeleton.joint_count
    edge_of = {c: e for e, (_, c) in enumerate(skeleton.edges)}
    dirs = np.asarray(rest_directions, dtype=np.float64)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    pos = np.zeros((m, n, 3))
    rot = np.empty((m, n, 3, 3))
    rot[:, skeleton.root_index] = np.eye(3) if root_rotation is None else root_rotation
    for p, c in skeleton.topological_edges():
        e = edge_of[c]
        rot[:, c] = rot[:, p] @ _euler(angles[:, e])
        pos[:, c] = pos[:, p] + np.einsum("mij,j->mi", rot[:, c], dirs[e] * bone_lengths[e])
    return pos


def sample_poses(cfg: SynthConfig, count: int, rng: np.random.Generator):
    """Camera-frame joints (count, N, 3) and their activity labels."""
    sk = cfg.skeleton
    acts = cfg.activities
    bounds = np.stack([_regime_array(sk, cfg.joint_angle_ranges[a]) for a in acts])
    which = rng.integers(0, len(acts), size=count)
    b = bounds[which]
    angles = b[..., 0] + (b[..., 1] - b[..., 0]) * rng.random((count, len(sk.edges), 3))
    yaw = rng.uniform(*cfg.yaw_range, size=count)
    tilt = rng.uniform(-0.08, 0.08, size=count)
    root_rot = _euler(np.column_stack([tilt, yaw, np.zeros(count)]))
    local = forward_kinematics(sk, cfg.bone_lengths, cfg.rest_directions, angles, root_rot)
    lx, ly = cfg.lateral_range
    root = np.column_stack([
        rng.uniform(-lx, lx, size=count),
        rng.uniform(-ly, ly, size=count),
        rng.uniform(*cfg.subject_distance_range, size=count),
    ])
    joints = local + root[:, None, :]
    return joints, [acts[i] for i in which]


@dataclass
class SynthData:
    library: object
    queries: list
    library_joints: np.ndarray
    library_activities: list
    query_joints: np.ndarray
    query_2d: np.ndarray
    query_activities: list


def generate_data(cfg: SynthConfig) -> SynthData:
    """Library and held-out queries; queries carry Gaussian pixel noise."""
    rng = np.random.default_rng(cfg.seed)
    joints, acts = sample_poses(cfg, cfg.pose_count, rng)
    cam = cfg.camera
    n_lib = cfg.library_count
    lib = build_library_arrays(
        cfg.skeleton, joints[:n_lib], cam.focal, cam.principal_point, cam.rotation, cam.translation,
        acts[:n_lib], None, {"source": "synth", "seed": int(cfg.seed)},
    )
    q3d = joints[n_lib:]
    q2d = project_points(q3d, cam.focal, cam.principal_point, cam.rotation, cam.translation)
    if cfg.noise_sigma_2d > 0:
        q2d = q2d + rng.normal(0.0, cfg.noise_sigma_2d, size=q2d.shape)
    q3d_cam = q3d @ cam.rotation.T + cam.translation
    sk = cfg.skeleton
    queries = [(Pose2D(q2d[i], sk), Pose3D(q3d_cam[i], sk), acts[n_lib + i]) for i in range(len(q3d))]
    return SynthData(lib, queries, joints[:n_lib], acts[:n_lib], q3d_cam, q2d, acts[n_lib:])


def generate(cfg: SynthConfig):
    """``(ExemplarLibrary, [(Pose2D, Pose3D, activity), ...])``."""
    data = generate_data(cfg)
    return data.library, data.queries


def queries_from_library(lib, count, seed=0, noise_sigma_2d=0.0):
    """Queries whose ground truth is a library entry (camera frame)."""
    rng = np.random.default_rng(seed)
    ids = rng.choice(len(lib), size=min(count, len(lib)), replace=False)
    sk = lib.skeleton
    gt = lib.camera_frame_poses(ids)
    out = []
    for row, i in enumerate(ids):
        xy = lib.projections[i]
        if noise_sigma_2d > 0:
            xy = xy + rng.normal(0.0, noise_sigma_2d, size=xy.shape)
        out.append((Pose2D(xy, sk), Pose3D(gt[row], sk), lib.activity(i)))
    return ids, out


def write_dataset(data: SynthData, cfg: SynthConfig, out_dir) -> dict:
    """Write library poses, camera, 2D queries and 3D ground truth as CSV/JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sk = cfg.skeleton
    paths = {
        "poses": out / "poses.csv",
        "camera": out / "camera.json",
        "queries": out / "queries.csv",
        "gt": out / "gt.csv",
        "skeleton": out / "skeleton.json",
    }
    write_pose_csv(paths["poses"], data.library_joints, activities=data.library_activities, skeleton=sk)
    write_camera_json(paths["camera"], cfg.camera)
    qids = [f"q{i}" for i in range(len(data.query_joints))]
    write_pose_csv(paths["queries"], data.query_2d, ids=qids, activities=data.query_activities, skeleton=sk)
    write_pose_csv(paths["gt"], data.query_joints, ids=qids, activities=data.query_activities, skeleton=sk)
    with open(paths["skeleton"], "w", encoding="utf-8") as fh:
        json.dump(sk.to_dict(), fh, indent=2)
        fh.write("\n")
    return {k: str(v) for k, v in paths.items()}
