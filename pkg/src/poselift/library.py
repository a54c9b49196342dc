"""Exemplar library: paired (3D pose, camera, cached 2D projection) entries.

The library stores everything as stacked float64 arrays so the matcher can
scan it without touching Python objects; :class:`Exemplar` views are built
on demand.

Binary layout (little endian)::

    header   magic b"PLIB" | version u32 | joints u32 | count u64
    records  count fixed-stride records (see ``record_dtype``)
    strings  u32 count, then (u32 length, utf-8 bytes) per label
    meta     u32 length, utf-8 JSON with skeleton and build metadata
"""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    CorruptProjectionCache,
    EmptyInput,
    FormatVersionMismatch,
    NonPositiveDepth,
    SkeletonMismatch,
)
from .geometry import CameraModel, Pose2D, Pose3D, project_points, rodrigues
from .skeleton import Skeleton, default_skeleton

log = logging.getLogger(__name__)

MAGIC = b"PLIB"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")
PROJECTION_TOL = 1e-6


def record_dtype(n_joints: int) -> np.dtype:
    return np.dtype([
        ("pose", "<f8", (n_joints, 3)),
        ("focal", "<f8"),
        ("pp", "<f8", (2,)),
        ("R", "<f8", (3, 3)),
        ("t", "<f8", (3,)),
        ("proj", "<f8", (n_joints, 2)),
        ("activity", "<i4"),
        ("subject", "<i4"),
    ])


@dataclass(frozen=True, eq=False)
class Exemplar:
    id: int
    pose3d: Pose3D
    camera: CameraModel
    projection: Pose2D
    activity: str | None = None
    subject: str | None = None


def _readonly(a, dtype=np.float64):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class ExemplarLibrary:
    """Immutable array-backed collection of exemplars with dense ids."""

    def __init__(self, skeleton, poses, focal, principal_point, rotation, translation,
                 projections, activity_codes=None, subject_codes=None, labels=(), metadata=None):
        self.skeleton = skeleton
        self.poses = _readonly(poses)
        m = len(self.poses)
        self.focal = _readonly(focal)
        self.principal_point = _readonly(principal_point)
        self.rotation = _readonly(rotation)
        self.translation = _readonly(translation)
        self.projections = _readonly(projections)
        self.activity_codes = _readonly(np.full(m, -1) if activity_codes is None else activity_codes, np.int32)
        self.subject_codes = _readonly(np.full(m, -1) if subject_codes is None else subject_codes, np.int32)
        self.labels = tuple(labels)
        self.metadata = dict(metadata or {})
        n = skeleton.joint_count
        shapes = {
            "poses": (self.poses, (m, n, 3)),
            "focal": (self.focal, (m,)),
            "principal_point": (self.principal_point, (m, 2)),
            "rotation": (self.rotation, (m, 3, 3)),
            "translation": (self.translation, (m, 3)),
            "projections": (self.projections, (m, n, 2)),
            "activity_codes": (self.activity_codes, (m,)),
            "subject_codes": (self.subject_codes, (m,)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise SkeletonMismatch(f"{name} has shape {arr.shape}, expected {shape}")
        self._cache = {}

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> Exemplar:
        i = int(i)
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return Exemplar(
            id=i,
            pose3d=Pose3D(self.poses[i], self.skeleton),
            camera=self.camera(i),
            projection=Pose2D(self.projections[i], self.skeleton),
            activity=self._label(self.activity_codes[i]),
            subject=self._label(self.subject_codes[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def entries(self):
        return list(self)

    def _label(self, code):
        return None if code < 0 else self.labels[code]

    def camera(self, i) -> CameraModel:
        return CameraModel(self.focal[i], tuple(self.principal_point[i]), self.rotation[i], self.translation[i])

    def activity(self, i):
        return self._label(self.activity_codes[i])

    def camera_frame_poses(self, ids=None) -> np.ndarray:
        """Exemplar joints mapped through their own extrinsics, shape (m, N, 3)."""
        sel = slice(None) if ids is None else np.asarray(ids)
        P, R, t = self.poses[sel], self.rotation[sel], self.translation[sel]
        return np.einsum("mij,mnj->mni", R, P) + t[:, None, :]

    def take(self, ids, metadata=None) -> "ExemplarLibrary":
        """New library holding ``ids`` in the given order, re-densified."""
        ids = np.asarray(ids, dtype=np.int64)
        return ExemplarLibrary(
            self.skeleton, self.poses[ids], self.focal[ids], self.principal_point[ids],
            self.rotation[ids], self.translation[ids], self.projections[ids],
            self.activity_codes[ids], self.subject_codes[ids], self.labels,
            self.metadata if metadata is None else metadata,
        )

    def revalidate(self, tol=PROJECTION_TOL, sample=None, seed=0):
        """Check cached projections against a fresh projection.

        Returns the maximum absolute deviation in pixels; raises
        :class:`CorruptProjectionCache` when it exceeds ``tol``.
        """
        ids = np.arange(len(self))
        if sample is not None and sample < len(self):
            ids = np.sort(np.random.default_rng(seed).choice(len(self), sample, replace=False))
        fresh = _project_many(self.poses[ids], self.focal[ids], self.principal_point[ids],
                              self.rotation[ids], self.translation[ids])
        dev = np.abs(fresh - self.projections[ids])
        worst = float(dev.max()) if dev.size else 0.0
        if not worst <= tol:
            bad = int(ids[np.argmax(dev.reshape(len(ids), -1).max(axis=1))])
            raise CorruptProjectionCache(f"entry {bad} cached projection off by {worst:.3g} px")
        return worst

    def equals(self, other) -> bool:
        if not isinstance(other, ExemplarLibrary) or len(self) != len(other):
            return False
        arrays = ("poses", "focal", "principal_point", "rotation", "translation", "projections")
        return (
            self.skeleton == other.skeleton
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and [self.activity(i) for i in range(len(self))] == [other.activity(i) for i in range(len(other))]
            and [self._label(c) for c in self.subject_codes] == [other._label(c) for c in other.subject_codes]
            and self.metadata == other.metadata
        )

    def __repr__(self):
        return f"ExemplarLibrary({len(self)} entries, {self.skeleton.name})"


def _project_many(poses, focal, pp, R, t):
    cam = np.einsum("mij,mnj->mni", R, poses) + t[:, None, :]
    z = cam[..., 2]
    if np.any(~(z > 0)):
        m, j = np.argwhere(~(z > 0))[0]
        raise NonPositiveDepth(int(j), float(z[m, j]))
    return focal[:, None, None] * cam[..., :2] / z[..., None] + pp[:, None, :]


def _intern(values, labels, index):
    codes = np.empty(len(values), dtype=np.int32)
    for i, v in enumerate(values):
        if v is None or v == "":
            codes[i] = -1
            continue
        v = str(v)
        if v not in index:
            index[v] = len(labels)
            labels.append(v)
        codes[i] = index[v]
    return codes


def build_library(items, skeleton: Skeleton | None = None, metadata=None) -> ExemplarLibrary:
    """Build a library from ``(Pose3D, CameraModel[, activity[, subject]])`` tuples.

    Order is preserved and each projection is computed once and cached.
    """
    items = list(items)
    if not items:
        raise EmptyInput("cannot build a library from no poses")
    skeleton = skeleton or items[0][0].skeleton
    poses, cams, acts, subs = [], [], [], []
    for i, item in enumerate(items):
        pose, cam = item[0], item[1]
        if pose.skeleton != skeleton:
            raise SkeletonMismatch(f"entry {i} uses skeleton {pose.skeleton.name}")
        poses.append(pose.joints)
        cams.append(cam)
        acts.append(item[2] if len(item) > 2 else None)
        subs.append(item[3] if len(item) > 3 else None)
    return build_library_arrays(
        skeleton, np.stack(poses),
        np.array([c.focal for c in cams]),
        np.array([c.principal_point for c in cams]),
        np.stack([c.rotation for c in cams]),
        np.stack([c.translation for c in cams]),
        acts, subs, metadata,
    )


def build_library_arrays(skeleton, poses, focal, principal_point, rotation, translation,
                         activities=None, subjects=None, metadata=None) -> ExemplarLibrary:
    """Array form of :func:`build_library` for large synthetic or CSV inputs."""
    poses = np.asarray(poses, dtype=np.float64)
    m = len(poses)
    if m == 0:
        raise EmptyInput("cannot build a library from no poses")
    if poses.shape[1:] != (skeleton.joint_count, 3):
        raise SkeletonMismatch(f"poses shape {poses.shape} does not fit {skeleton.joint_count} joints")
    focal = np.broadcast_to(np.asarray(focal, dtype=np.float64), (m,))
    principal_point = np.broadcast_to(np.asarray(principal_point, dtype=np.float64), (m, 2))
    rotation = np.broadcast_to(np.asarray(rotation, dtype=np.float64), (m, 3, 3))
    translation = np.broadcast_to(np.asarray(translation, dtype=np.float64), (m, 3))
    proj = _project_many(poses, focal, principal_point, rotation, translation)
    labels, index = [], {}
    act_codes = _intern(activities if activities is not None else [None] * m, labels, index)
    sub_codes = _intern(subjects if subjects is not None else [None] * m, labels, index)
    meta = {"source": "memory", "count": m}
    meta.update(metadata or {})
    meta["count"] = m
    return ExemplarLibrary(skeleton, poses, focal, principal_point, rotation, translation,
                           proj, act_codes, sub_codes, labels, meta)


def _axis_rotation(axis, theta):
    v = np.zeros(3)
    v["xyz".index(axis)] = theta
    return rodrigues(v)


def augment_cameras(poses, base_cam: CameraModel, azimuths, up_axis="y"):
    """Pair every pose with virtual cameras orbiting it about the vertical axis.

    For azimuth ``a`` the pose is rotated by ``a`` about the vertical axis
    through its centroid, which keeps the centroid at the same camera-frame
    position. Views that put a joint behind the camera are skipped.

    Returns ``(pairs, skipped)`` with pairs ordered pose-major, then angle.
    """
    azimuths = [float(a) for a in azimuths]
    if not all(math.isfinite(a) for a in azimuths):
        raise ValueError("azimuths must be finite")
    R_b, t_b = base_cam.rotation, base_cam.translation
    pairs, skipped = [], 0
    for pose in poses:
        c = pose.joints.mean(axis=0)
        for a in azimuths:
            Ry = _axis_rotation(up_axis, a)
            cam = base_cam.with_extrinsics(R_b @ Ry, R_b @ c + t_b - R_b @ Ry @ c)
            z = cam.to_camera_frame(pose.joints)[:, 2]
            if np.any(~(z > 0)):
                skipped += 1
                continue
            pairs.append((pose, cam))
    if skipped:
        log.info("augment_cameras skipped %d of %d virtual views (joints behind camera)",
                 skipped, len(pairs) + skipped)
    log.debug("augment_cameras produced %d pairs", len(pairs))
    return pairs, skipped


def subsample(lib: ExemplarLibrary, fraction: float, seed: int) -> ExemplarLibrary:
    """Uniform random subset of ``max(1, floor(fraction * len))`` entries.

    Selected entries keep their relative order; ``fraction == 1`` returns the
    library unchanged.
    """
    fraction = float(fraction)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return lib
    count = max(1, math.floor(fraction * len(lib)))
    rng = np.random.default_rng(seed)
    ids = np.sort(rng.choice(len(lib), size=count, replace=False))
    meta = dict(lib.metadata)
    meta.update(subsample_fraction=fraction, subsample_seed=int(seed), count=count)
    return lib.take(ids, meta)


def save(lib: ExemplarLibrary, path) -> None:
    n = lib.skeleton.joint_count
    rec = np.empty(len(lib), dtype=record_dtype(n))
    rec["pose"] = lib.poses
    rec["focal"] = lib.focal
    rec["pp"] = lib.principal_point
    rec["R"] = lib.rotation
    rec["t"] = lib.translation
    rec["proj"] = lib.projections
    rec["activity"] = lib.activity_codes
    rec["subject"] = lib.subject_codes
    meta = json.dumps({"skeleton": lib.skeleton.to_dict(), "metadata": lib.metadata}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, n, len(lib)))
        fh.write(rec.tobytes())
        fh.write(struct.pack("<I", len(lib.labels)))
        for label in lib.labels:
            b = label.encode("utf-8")
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load(path, validate=True) -> ExemplarLibrary:
    """Read a library written by :func:`save` and revalidate its projections."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatVersionMismatch("file too short for a library header")
    magic, version, n, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported library version {version}")
    dt = record_dtype(n)
    off = HEADER.size
    end = off + dt.itemsize * count
    if len(data) < end + 4:
        raise FormatVersionMismatch("truncated record block")
    rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
    off = end
    try:
        (n_labels,) = struct.unpack_from("<I", data, off)
        off += 4
        labels = []
        for _ in range(n_labels):
            (ln,) = struct.unpack_from("<I", data, off)
            off += 4
            labels.append(data[off:off + ln].decode("utf-8"))
            off += ln
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off:off + ln].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatVersionMismatch(f"corrupt trailer: {exc}") from exc
    skeleton = Skeleton.from_dict(meta["skeleton"])
    if skeleton.joint_count != n:
        raise FormatVersionMismatch("header joint count disagrees with stored skeleton")
    lib = ExemplarLibrary(skeleton, rec["pose"], rec["focal"], rec["pp"], rec["R"], rec["t"],
                          rec["proj"], rec["activity"], rec["subject"], labels, meta["metadata"])
    if validate:
        lib.revalidate()
    return lib


# --- text ingestion -------------------------------------------------------

class CSVFormatError(ValueError):
    def __init__(self, path, row, msg):
        self.row = row
        super().__init__(f"{path}: row {row}: {msg}")


@dataclass
class PoseTable:
    """Rows of a pose CSV: ids, labels and an (M, N, dim) coordinate array."""

    ids: list
    activities: list
    subjects: list
    joints: np.ndarray


def read_pose_csv(path, skeleton: Skeleton | None = None, dim=3) -> PoseTable:
    """Read ``id,activity,subject,J0x,J0y[,J0z],...`` rows.

    Raises :class:`CSVFormatError` naming the 1-based data row on bad input.
    """
    skeleton = skeleton or default_skeleton()
    width = 3 + dim * skeleton.joint_count
    ids, acts, subs, rows = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CSVFormatError(path, 0, "empty file")
        if len(header) != width:
            raise CSVFormatError(path, 0, f"expected {width} columns for {skeleton.joint_count} joints, got {len(header)}")
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise CSVFormatError(path, rowno, f"expected {width} columns, got {len(row)}")
            try:
                coords = [float(v) for v in row[3:]]
            except ValueError as exc:
                raise CSVFormatError(path, rowno, str(exc)) from exc
            if not all(math.isfinite(v) for v in coords):
                raise CSVFormatError(path, rowno, "non-finite coordinate")
            ids.append(row[0])
            acts.append(row[1] or None)
            subs.append(row[2] or None)
            rows.append(coords)
    joints = np.array(rows, dtype=np.float64).reshape(len(rows), skeleton.joint_count, dim)
    return PoseTable(ids, acts, subs, joints)


def pose_csv_header(skeleton: Skeleton, dim=3) -> list:
    axes = "xyz"[:dim]
    return ["id", "activity", "subject"] + [f"J{j}{a}" for j in range(skeleton.joint_count) for a in axes]


def write_pose_csv(path, joints, ids=None, activities=None, subjects=None, skeleton=None) -> None:
    joints = np.asarray(joints, dtype=np.float64)
    skeleton = skeleton or default_skeleton()
    m, _, dim = joints.shape
    ids = ids if ids is not None else [str(i) for i in range(m)]
    activities = activities if activities is not None else [None] * m
    subjects = subjects if subjects is not None else [None] * m
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(pose_csv_header(skeleton, dim))
        for i in range(m):
            w.writerow([ids[i], activities[i] or "", subjects[i] or ""] + [repr(float(v)) for v in joints[i].ravel()])


def read_camera_json(path) -> CameraModel:
    with open(path, encoding="utf-8") as fh:
        return CameraModel.from_dict(json.load(fh))


def write_camera_json(path, cam: CameraModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cam.to_dict(), fh, indent=2)
        fh.write("\n")
