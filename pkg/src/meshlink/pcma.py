"""Point cloud <-> mesh association.

Each face collects the points that represent the same surface:

1. ball query around the face centroid with radius ``sqrt(t_max^2 + theta_max^2)``,
2. drop candidates whose orthogonal projection falls outside the face,
3. adaptive thresholding on the signed distance to the face plane: the
   first level whose band ``[-theta_minus, +theta_plus]`` contains any
   candidate decides the face's links ("early stopping").

A point claimed by several faces is kept by the face with the smallest
absolute signed distance (ties: lowest ``(tile_id, face_id)``).
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import EmptyCloud, InputError, NoValidFaces
from .geom import EDGE_TOLERANCE, classify_edge_distances, edge_distances
from .index import PointIndex, build_point_index
from .scene import NOT_ASSOCIATED, FaceDerived, MeshTile, PointCloud, TiledMesh

logger = logging.getLogger(__name__)

LEVEL_NONE = 0


class BoundaryPolicy(enum.Enum):
    EXCLUDE = "exclude"
    INCLUDE = "include"


@dataclass(frozen=True)
class ThresholdSchedule:
    """Ordered ``(theta_minus, theta_plus)`` pairs in meters; level 1 first.

    ``theta_minus`` bounds the distance against the face normal,
    ``theta_plus`` along it.
    """

    levels: tuple[tuple[float, float], ...]

    def __post_init__(self):
        levels = tuple((float(a), float(b)) for a, b in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise InputError("threshold schedule needs at least one level")
        arr = np.array(levels)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InputError("thresholds must be finite and non-negative")
        if np.any(np.diff(arr, axis=0) < 0):
            raise InputError("thresholds must not decrease with ascending level")

    @classmethod
    def symmetric(cls, *thetas: float) -> "ThresholdSchedule":
        return cls(tuple((t, t) for t in thetas))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def theta_max(self) -> float:
        return float(np.max(self.levels))

    def minus(self) -> np.ndarray:
        return np.array([lv[0] for lv in self.levels])

    def plus(self) -> np.ndarray:
        return np.array([lv[1] for lv in self.levels])

    def encode(self) -> str:
        return ",".join(f"{a!r}:{b!r}" for a, b in self.levels)


H3D_SCHEDULE = ThresholdSchedule.symmetric(0.05, 0.10, 0.15)
V3D_SCHEDULE = ThresholdSchedule.symmetric(0.30, 0.60, 1.20)
PRESETS = {"h3d": H3D_SCHEDULE, "v3d": V3D_SCHEDULE}


@dataclass(frozen=True)
class PcmaConfig:
    schedule: ThresholdSchedule = H3D_SCHEDULE
    boundary_policy: BoundaryPolicy = BoundaryPolicy.EXCLUDE
    edge_tolerance: float = EDGE_TOLERANCE


@dataclass
class TileAssociation:
    """Face -> points of one tile in CSR layout plus the level per face."""

    indptr: np.ndarray
    indices: np.ndarray
    level: np.ndarray

    @property
    def n_faces(self) -> int:
        return len(self.level)

    def points(self, face_id: int) -> np.ndarray:
        return self.indices[self.indptr[face_id]:self.indptr[face_id + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def level_of(self, face_id: int) -> Optional[int]:
        lv = int(self.level[face_id])
        return None if lv == LEVEL_NONE else lv


@dataclass
class FaceAssociation:
    """Result of the point/mesh association.

    Attributes:
        n_points: size of the associated cloud.
        tiles: tile id -> :class:`TileAssociation`.
        point_tile, point_face: backlink per point, -1 if not associated.
        point_distance: signed distance to the linked face (NaN if none).
    """

    n_points: int
    tiles: Dict[int, TileAssociation]
    point_tile: np.ndarray
    point_face: np.ndarray
    point_distance: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.point_distance is None:
            self.point_distance = np.full(self.n_points, np.nan)

    def face_points(self, tile_id: int, face_id: int) -> np.ndarray:
        return self.tiles[tile_id].points(face_id)

    def level(self, tile_id: int, face_id: int) -> Optional[int]:
        return self.tiles[tile_id].level_of(face_id)

    @property
    def associated(self) -> np.ndarray:
        return self.point_face >= 0

    def apply_to(self, cloud: PointCloud) -> None:
        """Write the backlink into the cloud's association columns."""
        cloud.assoc_tile = self.point_tile.astype(np.int32)
        cloud.assoc_face = self.point_face.astype(np.int32)

    @classmethod
    def from_backlinks(cls, mesh: TiledMesh, point_tile, point_face) -> "FaceAssociation":
        """Rebuild the face lists from per-point backlinks (levels unknown)."""
        point_tile = np.asarray(point_tile, dtype=np.int64)
        point_face = np.asarray(point_face, dtype=np.int64)
        tiles = {}
        for t in mesh.tiles:
            sel = np.flatnonzero((point_tile == t.tile_id) & (point_face >= 0))
            if np.any(point_face[sel] >= t.n_faces):
                raise InputError(f"backlink references a missing face of tile {t.tile_id}")
            tiles[t.tile_id] = _csr(point_face[sel], sel, t.n_faces, np.zeros(t.n_faces, dtype=np.int16))
        known = np.isin(point_tile, [t.tile_id for t in mesh.tiles]) | (point_face < 0)
        if not np.all(known):
            raise InputError("backlink references an unknown tile")
        return cls(len(point_tile), tiles, point_tile, np.where(point_tile >= 0, point_face, -1))


def _csr(face: np.ndarray, point: np.ndarray, n_faces: int, level: np.ndarray) -> TileAssociation:
    order = np.lexsort((point, face))
    counts = np.bincount(face, minlength=n_faces) if len(face) else np.zeros(n_faces, dtype=np.int64)
    indptr = np.zeros(n_faces + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return TileAssociation(indptr, point[order].astype(np.int64), level)


# -- building blocks ---------------------------------------------------------

def association_radius(t_max, theta_max):
    """Ball radius that covers the whole face and the full threshold band."""
    return np.hypot(t_max, theta_max)


def filter_out_of_face(candidates, face_vertices, cloud: PointCloud,
                       policy: BoundaryPolicy = BoundaryPolicy.EXCLUDE,
                       tol: float = EDGE_TOLERANCE) -> np.ndarray:
    """Keep candidates whose orthogonal projection lies inside the face."""
    candidates = np.asarray(candidates, dtype=np.int64)
    v0, v1, v2 = (np.asarray(v, dtype=np.float64) for v in face_vertices)
    keep = _in_face_mask(cloud.positions[candidates], v0, v1, v2, policy, tol)
    return candidates[keep]


def _in_face_mask(points, v0, v1, v2, policy, tol):
    # edge distances are invariant to the normal offset, so the projection
    # step is implicit
    code = classify_edge_distances(edge_distances(points, v0, v1, v2), tol)
    if policy is BoundaryPolicy.INCLUDE:
        return code <= 1
    return code == 0


def first_passing_level(signed_distances, schedule: ThresholdSchedule) -> np.ndarray:
    """Per distance, the lowest level whose band contains it (0 if none)."""
    d = np.asarray(signed_distances, dtype=np.float64)[..., None]
    ok = (d >= -schedule.minus()) & (d <= schedule.plus())
    return np.where(ok.any(axis=-1), ok.argmax(axis=-1) + 1, LEVEL_NONE)


def adaptive_threshold_filter(signed_distances, schedule: ThresholdSchedule) -> tuple[np.ndarray, Optional[int]]:
    """Indices kept at the first non-empty level, and that level (or None)."""
    lv = first_passing_level(signed_distances, schedule)
    hit = lv[lv > 0]
    if len(hit) == 0:
        return np.empty(0, dtype=np.int64), None
    level = int(hit.min())
    return np.flatnonzero((lv > 0) & (lv <= level)), level


def _associate_faces(face_ids: np.ndarray, v0, v1, v2, derived: FaceDerived,
                     idx: PointIndex, cfg: PcmaConfig, workers: int = 1):
    """Vectorized steps (i)-(iii) for a batch of faces of one tile.

    Returns kept ``(face, point, signed_distance)`` arrays and per-face levels
    (indexed like ``face_ids``).
    """
    levels = np.zeros(len(face_ids), dtype=np.int16)
    if len(face_ids) == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e, np.empty(0), levels
    sched = cfg.schedule
    radius = association_radius(derived.t_max[face_ids], sched.theta_max)
    owner, pts = idx.pairs_within(derived.cog[face_ids], radius, workers=workers)
    f = face_ids[owner]
    p = idx.positions[pts]
    inside = _in_face_mask(p, v0[f], v1[f], v2[f], cfg.boundary_policy, cfg.edge_tolerance)
    owner, pts, f, p = owner[inside], pts[inside], f[inside], p[inside]
    dist = np.einsum("ij,ij->i", p - derived.cog[f], derived.unit_normal[f])
    lv = first_passing_level(dist, sched)
    ok = lv > 0
    face_level = np.full(len(face_ids), np.iinfo(np.int16).max, dtype=np.int64)
    np.minimum.at(face_level, owner[ok], lv[ok])
    face_level[face_level == np.iinfo(np.int16).max] = LEVEL_NONE
    levels[:] = face_level
    keep = ok & (lv <= face_level[owner])
    return f[keep], pts[keep], dist[keep], levels


def associate_face(tile: MeshTile, face_id: int, idx: PointIndex,
                   cfg: PcmaConfig = PcmaConfig()) -> tuple[np.ndarray, Optional[int]]:
    """Points linked to a single face, before multi-face claim resolution."""
    d = tile.derived()
    if d.degenerate[face_id]:
        return np.empty(0, dtype=np.int64), None
    v0, v1, v2 = tile.corners()
    _, pts, _, levels = _associate_faces(np.array([face_id]), v0, v1, v2, d, idx, cfg)
    lv = int(levels[0])
    return np.sort(pts), (None if lv == LEVEL_NONE else lv)


def _tile_job(tile, idx, cfg, workers):
    d = tile.derived()
    valid = np.flatnonzero(~d.degenerate)
    v0, v1, v2 = tile.corners()
    f, p, dist, lv = _associate_faces(valid, v0, v1, v2, d, idx, cfg, workers)
    level = np.zeros(tile.n_faces, dtype=np.int16)
    level[valid] = lv
    return f, p, dist, level


def resolve_claims(tile_ids: np.ndarray, faces: np.ndarray, points: np.ndarray,
                   dists: np.ndarray) -> np.ndarray:
    """Mask of the winning claim per point: min |distance|, then lowest
    ``(tile_id, face_id)``."""
    order = np.lexsort((faces, tile_ids, np.abs(dists), points))
    first = np.ones(len(order), dtype=bool)
    first[1:] = points[order][1:] != points[order][:-1]
    win = np.zeros(len(order), dtype=bool)
    win[order[first]] = True
    return win


def pcma_run(mesh: TiledMesh, cloud: PointCloud, cfg: PcmaConfig = PcmaConfig(),
             threads: int = 1, index: Optional[PointIndex] = None) -> FaceAssociation:
    """Associate every face of every tile with the cloud.

    Work is split over tiles; the final claim resolution is a deterministic
    reduction, so the output does not depend on ``threads``.
    """
    if len(cloud) == 0:
        raise EmptyCloud("point cloud is empty")
    if not any(np.any(~t.derived().degenerate) for t in mesh.tiles):
        raise NoValidFaces("mesh has no non-degenerate faces")
    idx = index if index is not None else build_point_index(cloud)
    tiles = sorted(mesh.tiles, key=lambda t: t.tile_id)
    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _tile_job(t, idx, cfg, 1), tiles))
    else:
        results = [_tile_job(t, idx, cfg, threads) for t in tiles]

    tid = np.concatenate([np.full(len(r[0]), t.tile_id, dtype=np.int64) for t, r in zip(tiles, results)])
    faces = np.concatenate([r[0] for r in results]).astype(np.int64)
    points = np.concatenate([r[1] for r in results]).astype(np.int64)
    dists = np.concatenate([r[2] for r in results]).astype(np.float64)
    win = resolve_claims(tid, faces, points, dists)
    tid, faces, points, dists = tid[win], faces[win], points[win], dists[win]

    n = len(cloud)
    point_tile = np.full(n, NOT_ASSOCIATED, dtype=np.int64)
    point_face = np.full(n, NOT_ASSOCIATED, dtype=np.int64)
    point_dist = np.full(n, np.nan)
    point_tile[points] = tid
    point_face[points] = faces
    point_dist[points] = dists

    out = {}
    for t, r in zip(tiles, results):
        sel = tid == t.tile_id
        out[t.tile_id] = _csr(faces[sel], points[sel], t.n_faces, r[3])
    n_assoc = int((point_face >= 0).sum())
    logger.info("pcma: %d/%d points associated over %d tiles", n_assoc, n, len(tiles))
    return FaceAssociation(n, out, point_tile, point_face, point_dist)


def level_histogram(assoc: FaceAssociation, n_levels: int) -> np.ndarray:
    """Number of associated points per level (index 0 unused)."""
    hist = np.zeros(n_levels + 1, dtype=np.int64)
    for ta in assoc.tiles.values():
        np.add.at(hist, np.repeat(ta.level.astype(np.int64), ta.counts()), 1)
    return hist
