"""MPJPE evaluation: Procrustes alignment, protocols, aggregation, diagnostics."""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .exceptions import DegenerateConfiguration, EmptyInput, EmptyLibrary, PoseLiftError
from .geometry import CameraModel, Pose2D, Pose3D, check_same_skeleton
from .warp import weak_perspective_lift

DEGENERATE_RATIO = 1e-9


class Protocol(str, enum.Enum):
    P1_RIGID = "p1"
    P2_ROOT_CENTERED = "p2"
    RIGID_PLUS_SCALE = "rigid-scale"


@dataclass(frozen=True)
class EvalProtocol:
    """``include_root_in_mpjpe`` only matters under root-centring, where the
    root error is zero by construction."""

    mode: Protocol = Protocol.P1_RIGID
    root_index: int = 0
    include_root_in_mpjpe: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Protocol(self.mode))


@dataclass(frozen=True, eq=False)
class Alignment:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    aligned: Pose3D
    residual: float


def _kabsch(H):
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    return Vt.T @ D @ U.T, S, D


def procrustes_align(source: Pose3D, target: Pose3D, with_scale=False) -> Alignment:
    """Least-squares similarity (or rigid) transform taking source onto target.

    Closed form from the SVD of the centred 3x3 cross-covariance, with the
    sign of the last singular direction flipped when needed so det(R) = +1.
    """
    check_same_skeleton(source, target)
    A, B = source.joints, target.joints
    if len(A) < 3:
        raise DegenerateConfiguration("need at least three joints to align")
    mu_a, mu_b = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - mu_a, B - mu_b
    R, S, D = _kabsch(Ac.T @ Bc)
    if not S[0] > 0 or S[1] < DEGENERATE_RATIO * S[0]:
        raise DegenerateConfiguration("joints are collinear or coincident")
    s = float(np.sum(S * np.diag(D)) / np.sum(Ac * Ac)) if with_scale else 1.0
    t = mu_b - s * R @ mu_a
    aligned = s * A @ R.T + t
    diff = aligned - B
    return Alignment(R, t, s, Pose3D(aligned, source.skeleton), float(np.sum(diff * diff)))


def _batch_align(sources, target, with_scale):
    """Align every ``sources[m]`` onto ``target``; returns aligned (M, N, 3)
    plus a mask of degenerate entries."""
    mu_a = sources.mean(axis=1, keepdims=True)
    mu_b = target.mean(axis=0)
    Ac = sources - mu_a
    Bc = target - mu_b
    H = np.einsum("mni,nj->mij", Ac, Bc)
    U, S, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = V @ Ut
    if with_scale:
        s = (S[:, 0] + S[:, 1] + d * S[:, 2]) / np.einsum("mni,mni->m", Ac, Ac)
    else:
        s = np.ones(len(sources))
    aligned = s[:, None, None] * np.einsum("mij,mnj->mni", R, Ac) + mu_b
    degenerate = ~(S[:, 0] > 0) | (S[:, 1] < DEGENERATE_RATIO * S[:, 0])
    return aligned, degenerate


def joint_errors(pred: Pose3D, gt: Pose3D, protocol: EvalProtocol | None = None) -> np.ndarray:
    """Per-joint Euclidean error (mm) after protocol-specific alignment."""
    protocol = protocol or EvalProtocol()
    check_same_skeleton(pred, gt)
    if protocol.mode is Protocol.P2_ROOT_CENTERED:
        r = protocol.root_index
        p = pred.joints - pred.joints[r]
        g = gt.joints - gt.joints[r]
    else:
        al = procrustes_align(pred, gt, with_scale=protocol.mode is Protocol.RIGID_PLUS_SCALE)
        p, g = al.aligned.joints, gt.joints
    return np.linalg.norm(p - g, axis=1)


def _reduce(errors, protocol):
    if protocol.mode is Protocol.P2_ROOT_CENTERED and not protocol.include_root_in_mpjpe:
        errors = np.delete(errors, protocol.root_index, axis=-1)
    return errors.mean(axis=-1)


def mpjpe(pred: Pose3D, gt: Pose3D, protocol: EvalProtocol | None = None) -> float:
    """Mean per-joint position error in millimetres.

    P1 aligns the prediction onto the ground truth (rigid), rigid-scale adds
    an isotropic scale, P2 only subtracts each pose's root joint.
    """
    protocol = protocol or EvalProtocol(root_index=gt.skeleton.root_index)
    return float(_reduce(joint_errors(pred, gt, protocol), protocol))


def batch_mpjpe(preds: np.ndarray, gt: np.ndarray, protocol: EvalProtocol) -> np.ndarray:
    """MPJPE of each of ``preds`` (M, N, 3) against one ``gt`` (N, 3).

    Entries whose alignment is degenerate get ``inf``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if protocol.mode is Protocol.P2_ROOT_CENTERED:
        r = protocol.root_index
        err = np.linalg.norm((preds - preds[:, r:r + 1]) - (gt - gt[r]), axis=-1)
        return _reduce(err, protocol)
    aligned, degenerate = _batch_align(preds, gt, protocol.mode is Protocol.RIGID_PLUS_SCALE)
    out = _reduce(np.linalg.norm(aligned - gt, axis=-1), protocol)
    out[degenerate] = np.inf
    return out


def upper_bound_gt_depth(query: Pose2D, gt: Pose3D, cam: CameraModel) -> Pose3D:
    """Warp the query with ground-truth depths instead of an exemplar's.

    ``gt`` is taken to be in the camera frame already; only the intrinsics
    of ``cam`` are used.
    """
    check_same_skeleton(query, gt)
    joints, _ = weak_perspective_lift(query.joints, gt.joints[:, 2], cam.focal, cam.principal_point)
    return Pose3D(joints, gt.skeleton)


def oracle_best_exemplar(lib, gt: Pose3D, protocol: EvalProtocol | None = None, chunk=65536) -> int:
    """Exhaustive argmin over the library of MPJPE(exemplar, gt); ties -> lower id.

    Exemplars are compared in their camera frame.
    """
    if len(lib) == 0:
        raise EmptyLibrary("library is empty")
    protocol = protocol or EvalProtocol(root_index=lib.skeleton.root_index)
    poses = lib._cache.get("camera_frame_poses")
    if poses is None:
        poses = lib.camera_frame_poses()
        lib._cache["camera_frame_poses"] = poses
    best_id, best_err = -1, math.inf
    for lo in range(0, len(lib), chunk):
        errs = batch_mpjpe(poses[lo:lo + chunk], gt.joints, protocol)
        i = int(np.argmin(errs))
        if errs[i] < best_err:
            best_id, best_err = lo + i, float(errs[i])
    if best_id < 0:
        raise DegenerateConfiguration("every exemplar alignment is degenerate")
    return best_id


@dataclass
class EvalReport:
    per_activity_mean: dict
    overall_mean: float
    overall_median: float
    per_joint_mean: list
    count: int
    per_activity_count: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    per_query: list = field(default_factory=list, repr=False)
    protocol: str = Protocol.P1_RIGID.value
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "protocol": self.protocol,
            "count": self.count,
            "failure_count": len(self.failures),
            "failures": [list(f) for f in self.failures],
            "overall_mean": self.overall_mean,
            "overall_median": self.overall_median,
            "per_activity_mean": dict(sorted(self.per_activity_mean.items())),
            "per_activity_count": dict(sorted(self.per_activity_count.items())),
            "per_joint_mean": list(self.per_joint_mean),
            "per_query": list(self.per_query),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """One-row table: activities as columns, then Avg. and Median."""
        acts = sorted(self.per_activity_mean)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + acts + ["Avg.", "Median"])
        w.writerow([self.label or self.protocol]
                   + [f"{self.per_activity_mean[a]:.2f}" for a in acts]
                   + [f"{self.overall_mean:.2f}", f"{self.overall_median:.2f}"])
        return buf.getvalue()


def aggregate(errors, activities, protocol: EvalProtocol, failures=(), label="") -> EvalReport:
    """Build a report from per-query per-joint errors (list of (N,) arrays)."""
    per_query = [float(_reduce(np.asarray(e), protocol)) for e in errors]
    if not per_query:
        raise EmptyInput("no query could be evaluated")
    by_act = {}
    for act, v in zip(activities, per_query):
        by_act.setdefault(act if act is not None else "", []).append(v)
    stacked = np.stack(errors)
    return EvalReport(
        per_activity_mean={a: math.fsum(v) / len(v) for a, v in by_act.items()},
        overall_mean=math.fsum(per_query) / len(per_query),
        overall_median=float(np.median(np.sort(per_query))),
        per_joint_mean=[math.fsum(col) / len(col) for col in stacked.T],
        count=len(per_query),
        per_activity_count={a: len(v) for a, v in by_act.items()},
        failures=list(failures),
        per_query=per_query,
        protocol=protocol.mode.value,
        label=label,
    )


def evaluate(lift_fn, queries, protocol: EvalProtocol | None = None, threads=None, label="") -> EvalReport:
    """Run ``lift_fn(query_2d, index)`` over ``(Pose2D, Pose3D, activity)``
    triples and aggregate MPJPE.

    ``lift_fn`` may take just the 2D pose. Queries whose lift or alignment
    raises a :class:`PoseLiftError` are excluded and listed in ``failures``.
    """
    queries = list(queries)
    if not queries:
        raise EmptyInput("no queries to evaluate")
    protocol = protocol or EvalProtocol(root_index=queries[0][1].skeleton.root_index)
    try:
        import inspect
        two_args = len(inspect.signature(lift_fn).parameters) >= 2
    except (TypeError, ValueError):
        two_args = False

    def one(item):
        i, (q2d, gt, _) = item
        try:
            pred = lift_fn(q2d, i) if two_args else lift_fn(q2d)
            return joint_errors(pred, gt, protocol), None
        except PoseLiftError as exc:
            return None, (i, f"{type(exc).__name__}: {exc}")

    results = ordered_map(one, enumerate(queries), threads)
    errors, acts, failures = [], [], []
    for (err, fail), (_, _, act) in zip(results, queries):
        if fail is not None:
            failures.append(fail)
        else:
            errors.append(err)
            acts.append(act)
    return aggregate(errors, acts, protocol, failures, label)
