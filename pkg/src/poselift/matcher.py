"""Nearest-neighbour matching of a 2D query against cached library projections.

The scan computes squared distances in single precision through the
``|p|^2 - 2 p.q + |q|^2`` expansion, sharded over worker threads. Every
entry whose single-precision distance falls inside a proven rounding margin
of the k-th best is then re-scored in double precision, so the returned
shortlist is exactly the double-precision top-k with ties broken by id.
"""
from __future__ import annotations

import enum
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._parallel import resolve_threads
from .exceptions import DegenerateScale, EmptyLibrary, SkeletonMismatch
from .geometry import Pose2D, row_sum_squares
from .library import ExemplarLibrary

_U32 = float(np.finfo(np.float32).eps)
_SHARD_MIN = 16384


class Normalization(str, enum.Enum):
    NONE = "none"
    ROOT_CENTER_SCALE = "root-center-scale"


@dataclass(frozen=True)
class MatchConfig:
    k: int = 10
    sigma: float = 10.0
    normalization: Normalization = Normalization.NONE

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError("k must be >= 1")
        if not float(self.sigma) > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "normalization", Normalization(self.normalization))


@dataclass(frozen=True)
class MatchResult:
    candidates: tuple
    weights: tuple | None = None

    @property
    def ids(self) -> list:
        return [c[0] for c in self.candidates]

    @property
    def errors(self) -> list:
        return [c[1] for c in self.candidates]

    def __len__(self):
        return len(self.candidates)


def normalize_array(xy: np.ndarray, root_index: int, mode) -> np.ndarray:
    """Vectorised :func:`normalize` over ``(..., N, 2)`` arrays."""
    mode = Normalization(mode)
    xy = np.asarray(xy, dtype=np.float64)
    if mode is Normalization.NONE:
        return xy
    centred = xy - xy[..., root_index:root_index + 1, :]
    scale = np.linalg.norm(centred, axis=-1).mean(axis=-1)
    if np.any(scale < 1e-6):
        raise DegenerateScale(f"mean joint-to-root distance below 1e-6 px ({np.min(scale):.3g})")
    return centred / scale[..., None, None]


def normalize(pose: Pose2D, mode) -> Pose2D:
    """Identity for ``none``; for ``root-center-scale`` move the root to the
    origin and divide by the mean joint-to-root distance."""
    if Normalization(mode) is Normalization.NONE:
        return pose
    return Pose2D(normalize_array(pose.joints, pose.skeleton.root_index, mode), pose.skeleton)


def posterior_weights(result: MatchResult, sigma: float) -> tuple:
    """Softmax of ``-error / sigma^2`` over the shortlist."""
    if not len(result):
        raise ValueError("empty match result")
    e = np.asarray(result.errors, dtype=np.float64)
    w = np.exp(-(e - e.min()) / float(sigma) ** 2)
    return tuple(float(v) for v in w / w.sum())


class ScanIndex:
    """Flattened, offset-centred single-precision copy of the projections."""

    def __init__(self, lib: ExemplarLibrary, mode=Normalization.NONE):
        self.mode = Normalization(mode)
        self.root_index = lib.skeleton.root_index
        feats = normalize_array(lib.projections, self.root_index, self.mode)
        m = len(lib)
        self.exact = np.ascontiguousarray(feats.reshape(m, -1))
        self.offset = self.exact.mean(axis=0)
        self.packed = np.ascontiguousarray(self.exact - self.offset, dtype=np.float32)
        packed64 = self.packed.astype(np.float64)
        self.norms = np.einsum("ij,ij->i", packed64, packed64)
        self.max_norm = float(np.sqrt(self.norms.max()))

    def __len__(self):
        return len(self.exact)

    def _distances(self, q32, qn, threads):
        m = len(self)
        n_shards = max(1, min(threads, m // _SHARD_MIN))
        if n_shards == 1:
            return self.norms - 2.0 * (self.packed @ q32) + qn
        bounds = np.linspace(0, m, n_shards + 1).astype(np.int64)
        out = np.empty(m, dtype=np.float64)

        def run(s):
            lo, hi = bounds[s], bounds[s + 1]
            out[lo:hi] = self.norms[lo:hi] - 2.0 * (self.packed[lo:hi] @ q32) + qn

        with ThreadPoolExecutor(n_shards) as pool:
            list(pool.map(run, range(n_shards)))
        return out

    def search(self, query_xy: np.ndarray, k: int, threads=None):
        """Ids and double-precision squared errors of the k nearest entries."""
        q = normalize_array(query_xy, self.root_index, self.mode).reshape(-1)
        m = len(self)
        k = min(k, m)
        qc = q - self.offset
        q32 = qc.astype(np.float32)
        q64 = q32.astype(np.float64)
        qn = float(q64 @ q64)
        d = self._distances(q32, qn, resolve_threads(threads))
        if k < m:
            kth = float(np.partition(d, k - 1)[k - 1])
            P, Q = self.max_norm, float(np.sqrt(qn))
            dim = q.size
            margin = 2.0 * _U32 * (2.0 * dim * P * Q + 3.0 * (P + Q) ** 2) + 1e-300
            cand = np.flatnonzero(d <= kth + 2.0 * margin)
        else:
            cand = np.arange(m)
        err = row_sum_squares(self.exact[cand] - q)
        order = np.lexsort((cand, err))[:k]
        return cand[order], err[order]


_index_lock = threading.Lock()


def get_index(lib: ExemplarLibrary, mode=Normalization.NONE) -> ScanIndex:
    """Scan index for ``lib``, built once per normalisation mode and cached."""
    mode = Normalization(mode)
    idx = lib._cache.get(("scan", mode))
    if idx is None:
        with _index_lock:
            idx = lib._cache.get(("scan", mode))
            if idx is None:
                idx = ScanIndex(lib, mode)
                lib._cache[("scan", mode)] = idx
    return idx


def match(lib: ExemplarLibrary, query: Pose2D, cfg: MatchConfig | None = None,
          with_weights=False, threads=None) -> MatchResult:
    """The k exemplars with the smallest reprojection error against ``query``."""
    cfg = cfg or MatchConfig()
    if len(lib) == 0:
        raise EmptyLibrary("library is empty")
    if query.skeleton != lib.skeleton:
        raise SkeletonMismatch(f"query skeleton {query.skeleton.name} != library {lib.skeleton.name}")
    ids, errs = get_index(lib, cfg.normalization).search(query.joints, cfg.k, threads)
    result = MatchResult(tuple((int(i), float(e)) for i, e in zip(ids, errs)))
    if with_weights:
        result = MatchResult(result.candidates, posterior_weights(result, cfg.sigma))
    return result
