"""Data model for the three modalities.

* :class:`PointCloud` - positions plus named per-point columns and the
  per-point face backlink written by the point/mesh association.
* :class:`MeshTile` / :class:`TiledMesh` - triangle mesh tiles with their
  bounding boxes and derived per-face data.
* :class:`CameraModel` - one central-perspective image with the
  collinearity mapping ``x_cam = R (X - C)``.

Pixel convention: origin at the top-left corner of the top-left pixel, columns
grow to the right and rows downwards.  Integer pixel ``(r, c)`` covers
``[r, r + 1) x [c, c + 1)`` and its ray passes through ``(r + 0.5, c + 0.5)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import (
    BehindCamera,
    DanglingIndex,
    InputError,
    ManifestMismatch,
    NonOrthonormalRotation,
    OutOfBounds,
)
from .geom import MIN_AREA, Aabb, Ray, aabb_of, triangle_normal_area

logger = logging.getLogger(__name__)

UNLABELED = -1
NOT_ASSOCIATED = -1
MIN_DEPTH = 1e-9


@dataclass
class PointCloud:
    """Ordered 3D points with named attribute columns.

    Attributes:
        positions: (n, 3) float64 coordinates in meters.
        attributes: column name -> array of length n.  Integer columns hold
            labels (``-1`` = unlabeled), float columns hold features.
        assoc_tile, assoc_face: per-point backlink to the associated face,
            ``-1`` where the point is not associated.
    """

    positions: np.ndarray
    attributes: Dict[str, np.ndarray] = field(default_factory=dict)
    assoc_tile: Optional[np.ndarray] = None
    assoc_face: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        for name, col in self.attributes.items():
            if len(col) != n:
                raise InputError(f"attribute {name!r} has {len(col)} rows, expected {n}")
        if self.assoc_tile is None:
            self.assoc_tile = np.full(n, NOT_ASSOCIATED, dtype=np.int32)
        if self.assoc_face is None:
            self.assoc_face = np.full(n, NOT_ASSOCIATED, dtype=np.int32)
        self.assoc_tile = np.asarray(self.assoc_tile, dtype=np.int32)
        self.assoc_face = np.asarray(self.assoc_face, dtype=np.int32)
        if len(self.assoc_tile) != n or len(self.assoc_face) != n:
            raise InputError("association columns must match the point count")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def is_associated(self) -> np.ndarray:
        return self.assoc_face >= 0

    def copy(self) -> "PointCloud":
        return PointCloud(
            self.positions.copy(),
            {k: v.copy() for k, v in self.attributes.items()},
            self.assoc_tile.copy(),
            self.assoc_face.copy(),
        )


@dataclass
class FaceDerived:
    """Per-face derived quantities of one tile, stored column-wise.

    ``t_max`` is the largest distance from the centroid to a vertex.
    """

    cog: np.ndarray
    unit_normal: np.ndarray
    area: np.ndarray
    t_max: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.area)


@dataclass
class MeshTile:
    tile_id: int
    vertices: np.ndarray
    faces: np.ndarray
    face_attrs: Dict[str, np.ndarray] = field(default_factory=dict)
    mbb: Optional[Aabb] = None
    _derived: Optional[FaceDerived] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.tile_id = int(self.tile_id)
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise DanglingIndex(f"tile {self.tile_id}: face references a missing vertex")
        for name, col in self.face_attrs.items():
            if len(col) != len(self.faces):
                raise InputError(f"tile {self.tile_id}: face column {name!r} has wrong length")
        if self.mbb is None and len(self.vertices):
            self.mbb = aabb_of(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = self.vertices
        return v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]

    def derived(self) -> FaceDerived:
        if self._derived is None:
            self._derived = compute_face_derived(self)
        return self._derived


@dataclass
class TiledMesh:
    """Collection of mesh tiles plus the manifest (tile id -> source, box)."""

    tiles: list[MeshTile]
    manifest: Dict[int, tuple[str, Aabb]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [t.tile_id for t in self.tiles]
        if len(set(ids)) != len(ids):
            raise InputError("tile ids must be unique")
        for t in self.tiles:
            if t.tile_id in self.manifest and t.mbb is not None:
                box = self.manifest[t.tile_id][1]
                if not box.close_to(t.mbb, 1e-6):
                    raise ManifestMismatch(f"tile {t.tile_id}: manifest box differs from its vertices")

    def tile(self, tile_id: int) -> MeshTile:
        for t in self.tiles:
            if t.tile_id == tile_id:
                return t
        raise KeyError(tile_id)

    @property
    def n_faces(self) -> int:
        return sum(t.n_faces for t in self.tiles)

    def total_area(self) -> float:
        return float(sum(t.derived().area.sum() for t in self.tiles))


def compute_face_derived(tile: MeshTile) -> FaceDerived:
    """Centroid, unit normal (counter-clockwise), area and ``t_max`` per face.

    Faces with area below 1e-12 m^2 are flagged as degenerate; their normal
    is set to zero.
    """
    v0, v1, v2 = tile.corners()
    cog = (v0 + v1 + v2) / 3.0
    normal, area = triangle_normal_area(v0, v1, v2)
    degenerate = ~(area >= MIN_AREA)
    normal = np.where(degenerate[:, None], 0.0, normal)
    t_max = np.max(
        np.stack([np.linalg.norm(v - cog, axis=1) for v in (v0, v1, v2)], axis=1), axis=1
    ) if len(cog) else np.empty(0)
    n_bad = int(degenerate.sum())
    if n_bad:
        logger.warning("tile %d: %d degenerate face(s) skipped", tile.tile_id, n_bad)
    return FaceDerived(cog, normal, area, t_max, degenerate)


@dataclass(frozen=True)
class CameraModel:
    """Interior and exterior orientation of one central-perspective image.

    ``R`` rotates world into camera coordinates, ``C`` is the projection
    center; the camera looks along +z, x to the right, y downwards.
    """

    image_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    C: np.ndarray
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "C", np.asarray(self.C, dtype=np.float64).reshape(3))
        if self.width <= 0 or self.height <= 0:
            raise InputError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if not err <= 1e-6:
            raise NonOrthonormalRotation(f"camera {self.image_id}: |R^T R - I| = {err:.3g}")
        if self.k1 != 0.0 or self.k2 != 0.0:
            self._check_distortion()

    def _check_distortion(self):
        # the radial model must be monotonic out to the farthest image corner
        xd = (np.array([0.0, self.width]) - self.cx) / self.fx
        yd = (np.array([0.0, self.height]) - self.cy) / self.fy
        rd = float(np.hypot(np.abs(xd).max(), np.abs(yd).max()))
        ru = np.linspace(0.0, 1.0, 2001)
        ru = ru * max(rd, 1e-12) * 4.0
        r2 = ru * ru
        fwd = ru * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
        rising = np.diff(fwd) > 0
        reach = np.flatnonzero(fwd >= rd)
        if len(reach) == 0 or not np.all(rising[:max(reach[0], 1)]):
            raise InputError(f"camera {self.image_id}: radial distortion is not invertible over the image")

    @classmethod
    def look_at(cls, image_id, center, target, width, height, focal, up=(0.0, 0.0, 1.0)) -> "CameraModel":
        """Camera at ``center`` looking at ``target`` with principal point in
        the image center and square pixels."""
        center = np.asarray(center, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - center
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        if abs(z @ up) > 1 - 1e-9:
            up = np.array([0.0, 1.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(image_id, width, height, focal, focal, width / 2.0, height / 2.0, np.stack([x, y, z]), center)

    # -- collinearity -------------------------------------------------------

    def to_camera(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.C) @ self.R.T

    def distort(self, x, y):
        if self.k1 == 0.0 and self.k2 == 0.0:
            return x, y
        r2 = x * x + y * y
        s = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return x * s, y * s

    def undistort(self, xd, yd, iterations: int = 30):
        """Invert :meth:`distort` by Newton steps on the radius."""
        xd = np.asarray(xd, dtype=np.float64)
        yd = np.asarray(yd, dtype=np.float64)
        if self.k1 == 0.0 and self.k2 == 0.0:
            return xd, yd
        rd = np.hypot(xd, yd)
        ru = rd.copy()
        for _ in range(iterations):
            r2 = ru * ru
            f = ru * (1.0 + self.k1 * r2 + self.k2 * r2 * r2) - rd
            df = 1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2
            ru = ru - f / df
        scale = np.divide(ru, rd, out=np.ones_like(rd), where=rd > 0)
        return xd * scale, yd * scale

    def project_points(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized projection: ``(row, col, depth)``; rows behind the camera
        get NaN pixel coordinates."""
        xc = self.to_camera(np.asarray(X, dtype=np.float64).reshape(-1, 3))
        z = xc[:, 2]
        front = z > MIN_DEPTH
        with np.errstate(divide="ignore", invalid="ignore"):
            xn, yn = self.distort(xc[:, 0] / z, xc[:, 1] / z)
        col = np.where(front, self.cx + self.fx * xn, np.nan)
        row = np.where(front, self.cy + self.fy * yn, np.nan)
        return row, col, z

    def pixel_dirs(self, rows, cols) -> np.ndarray:
        """Unit world directions through the centers of integer pixels."""
        return self.image_dirs(np.asarray(rows, dtype=np.float64) + 0.5, np.asarray(cols, dtype=np.float64) + 0.5)

    def image_dirs(self, rows, cols) -> np.ndarray:
        """Unit world directions through real-valued image coordinates."""
        rows = np.asarray(rows, dtype=np.float64)
        cols = np.asarray(cols, dtype=np.float64)
        x, y = self.undistort((cols - self.cx) / self.fx, (rows - self.cy) / self.fy)
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        d = d @ self.R
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def all_pixel_dirs(self) -> np.ndarray:
        rows, cols = np.divmod(np.arange(self.width * self.height), self.width)
        return self.pixel_dirs(rows, cols)


def project_point(cam: CameraModel, X) -> tuple[tuple[float, float], float]:
    """``((row, col), depth)`` of a world point; raises :class:`BehindCamera`."""
    row, col, depth = cam.project_points(np.asarray(X, dtype=np.float64).reshape(1, 3))
    if not depth[0] > MIN_DEPTH:
        raise BehindCamera(f"point is behind camera {cam.image_id}")
    return (float(row[0]), float(col[0])), float(depth[0])


def pixel_ray(cam: CameraModel, row: int, col: int) -> Ray:
    if not (0 <= row < cam.height and 0 <= col < cam.width):
        raise OutOfBounds(f"pixel ({row}, {col}) outside {cam.height}x{cam.width} image")
    d = cam.pixel_dirs(np.array([row]), np.array([col]))[0]
    return Ray(cam.C, d)


@dataclass
class LabelScheme:
    """Label id -> (name, RGB color)."""

    entries: Dict[int, tuple[str, tuple[int, int, int]]]

    def __post_init__(self):
        if any(k < 0 for k in self.entries):
            raise InputError("label ids must be non-negative")

    def color(self, label: int) -> tuple[int, int, int]:
        return self.entries[label][1]

    @classmethod
    def default(cls) -> "LabelScheme":
        return cls({
            0: ("ground", (170, 170, 170)),
            1: ("roof", (200, 40, 40)),
            2: ("facade", (240, 200, 60)),
            3: ("vegetation", (40, 160, 40)),
            4: ("vehicle", (40, 80, 220)),
        })
