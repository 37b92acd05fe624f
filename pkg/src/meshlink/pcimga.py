"""Point cloud <-> image association.

Visibility comes from the mesh: a point counts as visible in an image when
its associated face received at least one pixel there.  The explicit mode
then projects visible points with the collinearity equations and keeps, per
pixel, only the point of minimum depth.  The implicit mode needs no extra
computation; it is the face-mediated transfer in :mod:`meshlink.transfer`.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .imgma import SparsePixelCloud
from .pcma import FaceAssociation
from .scene import CameraModel, PointCloud

logger = logging.getLogger(__name__)


def _face_key(tile, face):
    return (np.asarray(tile, dtype=np.int64) << 32) | np.asarray(face, dtype=np.int64)


def visible_points(assoc: FaceAssociation, clouds: Dict[int, SparsePixelCloud]) -> Dict[int, np.ndarray]:
    """Image id -> sorted indices of points whose face is seen in that image."""
    linked = np.flatnonzero(assoc.point_face >= 0)
    pkeys = _face_key(assoc.point_tile[linked], assoc.point_face[linked])
    out = {}
    for iid in sorted(clouds):
        spc = clouds[iid]
        fkeys = np.unique(_face_key(spc.tile_id, spc.face_id))
        out[iid] = linked[np.isin(pkeys, fkeys)]
    return out


@dataclass
class ImageLinks:
    """Point/pixel links of one image.

    ``points``/``rows``/``cols``/``depth`` list every in-bounds projection of
    a visible point; ``keep`` marks the min-depth point of each pixel.
    """

    image_id: int
    points: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    depth: np.ndarray
    keep: np.ndarray
    behind_camera: int = 0
    out_of_bounds: int = 0
    face_disagreements: int = 0

    def retained(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(points, rows, cols, depth)`` of the per-pixel winners, row-major."""
        k = self.keep
        return self.points[k], self.rows[k], self.cols[k], self.depth[k]


@dataclass
class PointPixelLinks:
    images: Dict[int, ImageLinks] = field(default_factory=dict)


def min_depth_per_pixel(points, rows, cols, depth) -> np.ndarray:
    """Mask selecting the smallest-depth entry per pixel (ties: lowest point
    index).  Independent of input order."""
    order = np.lexsort((points, depth, cols, rows))
    r, c = rows[order], cols[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    keep = np.zeros(len(order), dtype=bool)
    keep[order[first]] = True
    return keep


def link_image(cloud: PointCloud, cam: CameraModel, visible: np.ndarray,
               spc: SparsePixelCloud | None = None) -> ImageLinks:
    visible = np.asarray(visible, dtype=np.int64)
    row, col, depth = cam.project_points(cloud.positions[visible])
    front = depth > 1e-9
    r = np.floor(np.where(front, row, -1.0))
    c = np.floor(np.where(front, col, -1.0))
    inb = front & (r >= 0) & (r < cam.height) & (c >= 0) & (c < cam.width)
    pts = visible[inb]
    r = r[inb].astype(np.int64)
    c = c[inb].astype(np.int64)
    d = depth[inb]
    order = np.lexsort((pts, c, r))
    pts, r, c, d = pts[order], r[order], c[order], d[order]
    keep = min_depth_per_pixel(pts, r, c, d)
    disagree = 0
    if spc is not None and len(spc):
        rec = spc.lookup(r[keep], c[keep])
        hit = rec >= 0
        kp = pts[keep][hit]
        disagree = int(np.count_nonzero(
            (spc.tile_id[rec[hit]] != cloud.assoc_tile[kp]) | (spc.face_id[rec[hit]] != cloud.assoc_face[kp])
        ))
    return ImageLinks(
        cam.image_id, pts, r, c, d, keep,
        behind_camera=int(np.count_nonzero(~front)),
        out_of_bounds=int(np.count_nonzero(front & ~inb)),
        face_disagreements=disagree,
    )


def pcimga_explicit(cloud: PointCloud, cameras: list[CameraModel], visibility: Dict[int, np.ndarray],
                    clouds: Dict[int, SparsePixelCloud] | None = None, threads: int = 1) -> PointPixelLinks:
    """Project the visible points of each image and resolve pixels by minimum depth.

    ``clouds`` is optional and only feeds the face-disagreement diagnostic
    (links whose point face differs from the face seen in that pixel).
    """
    cams = [c for c in cameras if c.image_id in visibility]

    def job(cam):
        spc = clouds.get(cam.image_id) if clouds else None
        links = link_image(cloud, cam, visibility[cam.image_id], spc)
        if links.behind_camera:
            logger.warning("image %d: %d visible point(s) behind the camera dropped",
                           cam.image_id, links.behind_camera)
        return links

    if threads > 1 and len(cams) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(job, cams))
    else:
        res = [job(c) for c in cams]
    return PointPixelLinks({lk.image_id: lk for lk in sorted(res, key=lambda x: x.image_id)})
