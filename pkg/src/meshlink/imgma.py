"""Image <-> mesh association.

Per image: (I) preselect tiles whose bounding box meets the stretched
camera pyramid, (II) cast one ray per pixel against each selected tile,
(III) fuse the per-tile hits by keeping the smallest depth per pixel.  The
result is a sparse pixel cloud holding only linked pixels.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .errors import InputError, InvalidFloor
from .geom import (
    Aabb,
    ConvexPolyhedron,
    Plane,
    point_in_polyhedron,
    segment_polygon_intersect,
    triangle_normal_area,
)
from .index import FaceBvh, build_face_bvh
from .scene import CameraModel, TiledMesh

logger = logging.getLogger(__name__)

DEPTH_TIE_TOL = 1e-9


@dataclass
class CameraPyramid:
    """Convex frustum from the projection center through the image corners,
    cut below by a horizontal floor (and, far away, by a cap perpendicular
    to the viewing axis so that it stays bounded)."""

    apex: np.ndarray
    z_floor: float
    poly: ConvexPolyhedron

    def contains(self, p) -> bool:
        return point_in_polyhedron(p, self.poly)

    def apex_edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.poly.vertices
        tol = 1e-7 * max(1.0, float(np.abs(self.apex).max()))
        at_apex = np.linalg.norm(v - self.apex, axis=1) <= tol
        out = []
        for a, b in self.poly.edges:
            if at_apex[a]:
                out.append((v[a], v[b]))
            elif at_apex[b]:
                out.append((v[b], v[a]))
        return out


def build_camera_pyramid(cam: CameraModel, z_floor: float, far: Optional[float] = None) -> CameraPyramid:
    """``far`` is the depth of the closing cap; by default far enough
    (1e6 m) not to matter for any realistic scene."""
    if not z_floor < cam.C[2]:
        raise InvalidFloor(f"floor {z_floor} must lie below the projection center z={cam.C[2]}")
    far = 1e6 if far is None else float(far)
    if cam.k1 == 0.0 and cam.k2 == 0.0:
        rows = np.array([0.0, 0.0, cam.height, cam.height])
        cols = np.array([0.0, cam.width, cam.width, 0.0])
        dirs = cam.image_dirs(rows, cols)
    else:
        # distorted borders are curved: bound them by the box of the
        # undistorted border samples
        h, w = float(cam.height), float(cam.width)
        tr = np.linspace(0.0, h, 4 * cam.height + 1)
        tc = np.linspace(0.0, w, 4 * cam.width + 1)
        br = np.concatenate([np.zeros_like(tc), np.full_like(tc, h), tr, tr])
        bc = np.concatenate([tc, tc, np.zeros_like(tr), np.full_like(tr, w)])
        x, y = cam.undistort((bc - cam.cx) / cam.fx, (br - cam.cy) / cam.fy)
        x0, x1, y0, y1 = x.min(), x.max(), y.min(), y.max()
        dcam = np.array([[x0, y0, 1.0], [x1, y0, 1.0], [x1, y1, 1.0], [x0, y1, 1.0]])
        dirs = dcam @ cam.R
    axis = cam.R[2]
    inside_dir = dirs.mean(axis=0)
    planes = []
    for i in range(4):
        n = np.cross(dirs[i], dirs[(i + 1) % 4])
        n /= np.linalg.norm(n)
        if n @ inside_dir < 0:
            n = -n
        planes.append(Plane(n, float(n @ cam.C)))
    planes.append(Plane(np.array([0.0, 0.0, 1.0]), float(z_floor)))
    planes.append(Plane(-axis, float(-(axis @ cam.C) - far)))
    return CameraPyramid(cam.C.copy(), float(z_floor), ConvexPolyhedron.from_halfspaces(planes))


def _nondegenerate(loop: np.ndarray) -> bool:
    _, a1 = triangle_normal_area(loop[0], loop[1], loop[2])
    _, a2 = triangle_normal_area(loop[0], loop[2], loop[3]) if len(loop) > 3 else (None, 0.0)
    return a1 + a2 >= 1e-12


def mbb_visible(pyramid: CameraPyramid, box: Aabb) -> tuple[bool, Optional[int]]:
    """Three-stage box/pyramid overlap test with check omission.

    1. a box corner lies in the pyramid,
    2. a pyramid edge leaving the projection center meets the box,
    3. a box edge meets a pyramid face.

    Returns ``(visible, stage)`` where ``stage`` is the first test that
    succeeded.
    """
    corners = box.corners()
    for c in corners:
        if pyramid.contains(c):
            return True, 1
    box_faces = [f for f in box.faces() if _nondegenerate(f)]
    if box.contains(pyramid.apex, 1e-9):
        return True, 2
    for a, b in pyramid.apex_edges():
        for f in box_faces:
            if segment_polygon_intersect(a, b, f):
                return True, 2
    loops = [lp for lp in pyramid.poly.face_loops()]
    for i, j in box.edges():
        a, b = corners[i], corners[j]
        if np.array_equal(a, b):
            continue
        for lp in loops:
            if segment_polygon_intersect(a, b, lp):
                return True, 3
    return False, None


def scene_floor(mesh: TiledMesh) -> float:
    """The lowest face of all tile boxes."""
    return float(min(t.mbb.min[2] for t in mesh.tiles))


def _far_for(cam: CameraModel, mesh: TiledMesh) -> float:
    pts = np.concatenate([t.mbb.corners() for t in mesh.tiles])
    return 2.0 * float(np.linalg.norm(pts - cam.C, axis=1).max()) + 1.0


def select_visible_tiles(cam: CameraModel, mesh: TiledMesh, z_floor: Optional[float] = None,
                         stats: Optional[Counter] = None) -> list[int]:
    """Tile ids whose box meets the camera pyramid, ascending.

    ``stats`` (if given) counts which stage decided each tile (``None`` for
    rejected tiles).
    """
    tiles = [t for t in mesh.tiles if t.mbb is not None]
    if not tiles:
        return []
    z_floor = scene_floor(mesh) if z_floor is None else z_floor
    if not z_floor < cam.C[2]:
        # camera at or below the lowest box face: nothing above the floor is in front
        z_floor = cam.C[2] - 1.0
        logger.warning("camera %d sits below the scene floor; floor lowered", cam.image_id)
    pyr = build_camera_pyramid(cam, z_floor, far=_far_for(cam, mesh))
    out = []
    for t in sorted(tiles, key=lambda t: t.tile_id):
        visible, stage = mbb_visible(pyr, t.mbb)
        if stats is not None:
            stats[stage] += 1
        if visible:
            out.append(t.tile_id)
    return out


@dataclass
class SparsePixelCloud:
    """Linked pixels of one image, sorted row-major, one record per pixel.

    Attribute columns (e.g. transferred labels) travel with the records.
    """

    image_id: int
    rows: np.ndarray
    cols: np.ndarray
    depth: np.ndarray
    tile_id: np.ndarray
    face_id: np.ndarray
    attributes: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.tile_id = np.asarray(self.tile_id, dtype=np.int64)
        self.face_id = np.asarray(self.face_id, dtype=np.int64)
        n = len(self.rows)
        if any(len(a) != n for a in (self.cols, self.depth, self.tile_id, self.face_id)):
            raise InputError("sparse pixel cloud columns differ in length")
        for k, v in self.attributes.items():
            if len(v) != n:
                raise InputError(f"pixel attribute {k!r} has wrong length")

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def empty(cls, image_id: int) -> "SparsePixelCloud":
        e = np.empty(0, dtype=np.int64)
        return cls(image_id, e, e, np.empty(0), e, e)

    def keys(self) -> np.ndarray:
        return (self.rows << 32) | self.cols

    def is_sorted_unique(self) -> bool:
        k = self.keys()
        return bool(np.all(k[1:] > k[:-1]))

    def lookup(self, rows, cols) -> np.ndarray:
        """Record index per pixel, -1 where the pixel is not linked."""
        q = (np.asarray(rows, dtype=np.int64) << 32) | np.asarray(cols, dtype=np.int64)
        k = self.keys()
        pos = np.searchsorted(k, q)
        pos_c = np.minimum(pos, max(len(k) - 1, 0))
        found = (pos < len(k)) & (k[pos_c] == q) if len(k) else np.zeros(q.shape, dtype=bool)
        return np.where(found, pos_c, -1)

    def face_groups(self) -> dict[tuple[int, int], np.ndarray]:
        """(tile_id, face_id) -> record indices."""
        order = np.lexsort((self.face_id, self.tile_id))
        t, f = self.tile_id[order], self.face_id[order]
        cut = np.flatnonzero((t[1:] != t[:-1]) | (f[1:] != f[:-1])) + 1
        groups = {}
        for seg in np.split(order, cut):
            if len(seg):
                groups[(int(self.tile_id[seg[0]]), int(self.face_id[seg[0]]))] = np.sort(seg)
        return groups


@dataclass
class VisibilityTable:
    """Image -> visible tiles and its transpose tile -> images."""

    image_tiles: Dict[int, list[int]] = field(default_factory=dict)
    tile_images: Dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def from_image_tiles(cls, image_tiles: Dict[int, Iterable[int]]) -> "VisibilityTable":
        it = {i: sorted(set(ts)) for i, ts in sorted(image_tiles.items())}
        ti: Dict[int, list[int]] = {}
        for i, ts in it.items():
            for t in ts:
                ti.setdefault(t, []).append(i)
        return cls(it, {t: sorted(v) for t, v in sorted(ti.items())})

    def is_consistent(self) -> bool:
        pairs_a = {(i, t) for i, ts in self.image_tiles.items() for t in ts}
        pairs_b = {(i, t) for t, iss in self.tile_images.items() for i in iss}
        return pairs_a == pairs_b


def raycast_image_tile(cam: CameraModel, tile_bvh: FaceBvh, tile_id: Optional[int] = None,
                       dirs: Optional[np.ndarray] = None, pool: Optional[ThreadPoolExecutor] = None,
                       chunks: int = 1):
    """Closest hit per pixel within one tile.

    Returns ``(rows, cols, depth, face_id)`` for pixels whose ray hits the
    tile.  Depth is the camera z coordinate of the hit.  With a ``pool`` the
    pixels are cast in ``chunks`` contiguous blocks; the result is the same.
    """
    if dirs is None:
        dirs = cam.all_pixel_dirs()
    origin = cam.C[None, :]
    if pool is not None and chunks > 1 and len(dirs) >= 2 * chunks:
        blocks = np.array_split(dirs, chunks)
        parts = list(pool.map(lambda d: tile_bvh.cast(origin, d), blocks))
        face = np.concatenate([p[0] for p in parts])
        t = np.concatenate([p[1] for p in parts])
    else:
        face, t = tile_bvh.cast(origin, dirs)
    hit = np.flatnonzero(face >= 0)
    rows, cols = np.divmod(hit, cam.width)
    depth = t[hit] * (dirs[hit] @ cam.R[2])
    return rows, cols, depth, face[hit]


def fuse_depth(image_id: int, results: Iterable[tuple[int, tuple]], width: int,
               tie_tol: float = DEPTH_TIE_TOL) -> SparsePixelCloud:
    """Min-depth fusion of per-tile ray casting results.

    ``results`` yields ``(tile_id, (rows, cols, depth, face_id))``.  Depths
    within ``tie_tol`` of the pixel minimum tie and go to the lowest
    ``(tile_id, face_id)``.  The outcome does not depend on the order of
    ``results``.
    """
    parts = [(tid, r) for tid, r in results if len(r[0])]
    if not parts:
        return SparsePixelCloud.empty(image_id)
    rows = np.concatenate([r[0] for _, r in parts]).astype(np.int64)
    cols = np.concatenate([r[1] for _, r in parts]).astype(np.int64)
    depth = np.concatenate([r[2] for _, r in parts]).astype(np.float64)
    face = np.concatenate([r[3] for _, r in parts]).astype(np.int64)
    tile = np.concatenate([np.full(len(r[0]), tid, dtype=np.int64) for tid, r in parts])
    pix = rows * width + cols
    uniq, inv = np.unique(pix, return_inverse=True)
    dmin = np.full(len(uniq), np.inf)
    np.minimum.at(dmin, inv, depth)
    cand = np.flatnonzero(depth <= dmin[inv] + tie_tol)
    order = cand[np.lexsort((face[cand], tile[cand], pix[cand]))]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix[order][1:] != pix[order][:-1]
    sel = order[first]
    return SparsePixelCloud(image_id, rows[sel], cols[sel], depth[sel], tile[sel], face[sel])


@dataclass(frozen=True)
class ImgmaConfig:
    depth_tie_tol: float = DEPTH_TIE_TOL


class BvhCache:
    """Builds each tile's BVH once; safe to share between worker threads
    once :meth:`prepare` has run."""

    def __init__(self, mesh: TiledMesh):
        self.mesh = mesh
        self._bvh: Dict[int, Optional[FaceBvh]] = {}

    def prepare(self, tile_ids: Iterable[int]) -> None:
        for tid in sorted(set(tile_ids)):
            if tid not in self._bvh:
                tile = self.mesh.tile(tid)
                self._bvh[tid] = build_face_bvh(tile) if np.any(~tile.derived().degenerate) else None

    def get(self, tile_id: int) -> Optional[FaceBvh]:
        return self._bvh[tile_id]


def associate_image(cam: CameraModel, tile_ids: list[int], bvhs: BvhCache,
                    cfg: ImgmaConfig = ImgmaConfig(), threads: int = 1) -> SparsePixelCloud:
    """Steps (II) and (III) for one image; ``threads`` splits the pixels."""
    dirs = cam.all_pixel_dirs()
    results = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for tid in tile_ids:
            bvh = bvhs.get(tid)
            if bvh is not None:
                results.append((tid, raycast_image_tile(cam, bvh, tid, dirs, pool, threads)))
    finally:
        if pool is not None:
            pool.shutdown()
    return fuse_depth(cam.image_id, results, cam.width, cfg.depth_tie_tol)


def imgma_run(cameras: list[CameraModel], mesh: TiledMesh, cfg: ImgmaConfig = ImgmaConfig(),
              threads: int = 1, stats: Optional[Counter] = None):
    """Associate every image with the mesh.

    Returns ``(VisibilityTable, {image_id: SparsePixelCloud})``.  Images that
    fail are logged and left out.  Work is parallel over images, and over
    pixel blocks when there are more threads than images.
    """
    image_tiles = {}
    z_floor = scene_floor(mesh) if mesh.tiles else 0.0
    for cam in cameras:
        image_tiles[cam.image_id] = select_visible_tiles(cam, mesh, z_floor, stats)
        if not image_tiles[cam.image_id]:
            logger.warning("image %d sees no tile", cam.image_id)
    vis = VisibilityTable.from_image_tiles(image_tiles)
    bvhs = BvhCache(mesh)
    bvhs.prepare(t for ts in image_tiles.values() for t in ts)

    outer = max(1, min(threads, len(cameras)))
    inner = max(1, threads // outer)

    def job(cam):
        try:
            return cam.image_id, associate_image(cam, image_tiles[cam.image_id], bvhs, cfg, inner)
        except Exception as exc:  # one bad image must not stop the run
            logger.error("image %d failed: %s", cam.image_id, exc)
            return cam.image_id, None

    if outer > 1:
        with ThreadPoolExecutor(max_workers=outer) as pool:
            done = list(pool.map(job, cameras))
    else:
        done = [job(c) for c in cameras]
    clouds = {iid: spc for iid, spc in sorted(done, key=lambda x: x[0]) if spc is not None}
    return vis, clouds


def face_pixel_map(clouds: Dict[int, SparsePixelCloud]) -> dict[tuple[int, int], list[tuple[int, np.ndarray]]]:
    """(tile_id, face_id) -> [(image_id, record indices), ...]."""
    out: dict[tuple[int, int], list[tuple[int, np.ndarray]]] = {}
    for iid in sorted(clouds):
        for key, idx in clouds[iid].face_groups().items():
            out.setdefault(key, []).append((iid, idx))
    return dict(sorted(out.items()))
