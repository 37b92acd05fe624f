"""Acceleration structures.

``PointIndex`` answers inclusive ball queries over point positions (candidate
search via ``scipy.spatial.cKDTree`` with a median split, then an exact
distance filter).  ``FaceBvh`` is a binary bounding volume hierarchy over
the faces of one tile, traversed by a compiled closest-hit kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import EmptyCloud, NoValidFaces
from .geom import Aabb, Ray
from .scene import MeshTile, PointCloud

KD_LEAF_SIZE = 32
BVH_LEAF_SIZE = 8


class PointIndex:
    def __init__(self, positions: np.ndarray, leaf_size: int = KD_LEAF_SIZE):
        positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(positions) == 0:
            raise EmptyCloud("cannot index an empty point cloud")
        self.positions = positions
        self.leaf_size = leaf_size
        self._tree = cKDTree(positions, leafsize=leaf_size, balanced_tree=True, compact_nodes=False)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def depth(self) -> int:
        def walk(node):
            if node.lesser is None:
                return 0
            return 1 + max(walk(node.lesser), walk(node.greater))

        return walk(self._tree.tree)

    def ball_query(self, center, r: float) -> np.ndarray:
        """Sorted indices of all points with ``|p - center| <= r``."""
        return self.ball_query_many(np.asarray(center, dtype=np.float64).reshape(1, 3), np.array([r]))[0]

    def ball_query_many(self, centers: np.ndarray, radii: np.ndarray, workers: int = 1) -> list[np.ndarray]:
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), (len(centers),))
        if np.any(radii < 0):
            raise ValueError("ball radius must be non-negative")
        # inflate slightly for the tree, then filter exactly
        slack = radii * (1 + 1e-9) + 1e-12
        cand = self._tree.query_ball_point(centers, slack, workers=workers, return_sorted=True)
        out = []
        for c, r, idx in zip(centers, radii, cand):
            idx = np.asarray(idx, dtype=np.int64)
            if len(idx):
                diff = self.positions[idx] - c
                idx = idx[np.sqrt(np.einsum("ij,ij->i", diff, diff)) <= r]
            out.append(idx)
        return out

    def pairs_within(self, centers: np.ndarray, radii: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ball query: ``(center_index, point_index)`` pairs."""
        hits = self.ball_query_many(centers, radii, workers=workers)
        counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
        owner = np.repeat(np.arange(len(hits)), counts)
        pts = np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)
        return owner, pts.astype(np.int64)


def build_point_index(cloud: PointCloud, leaf_size: int = KD_LEAF_SIZE) -> PointIndex:
    return PointIndex(cloud.positions, leaf_size)


def ball_query(idx: PointIndex, center, r: float) -> np.ndarray:
    return idx.ball_query(center, r)


@dataclass
class FaceBvh:
    """Flattened BVH. Leaves have ``node_count > 0`` and reference
    ``order[node_start : node_start + node_count]``."""

    tile_id: int
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    face_ids: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_min)

    @property
    def bounds(self) -> Aabb:
        return Aabb(self.node_min[0], self.node_max[0])

    def cast(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest hit for many rays: ``(face_id, t)``; misses give -1 / inf."""
        origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(dirs)), dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        return _kernels.bvh_cast(
            origins, dirs, self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_start, self.node_count, self.order, self.v0, self.v1, self.v2, self.face_ids,
        )

    def visited_nodes(self, ray: Ray) -> list[int]:
        """Nodes whose boxes the ray enters (diagnostic, no pruning)."""
        inv = np.divide(1.0, ray.direction, out=np.full(3, np.inf), where=ray.direction != 0)
        seen = []
        stack = [0]
        while stack:
            node = stack.pop()
            if _kernels._slab(*ray.origin, *inv, self.node_min[node], self.node_max[node]) == np.inf:
                continue
            seen.append(node)
            if self.node_count[node] == 0:
                stack.extend([self.node_right[node], self.node_left[node]])
        return seen


def build_face_bvh(tile: MeshTile, leaf_size: int = BVH_LEAF_SIZE) -> FaceBvh:
    """Median split on the widest centroid axis; degenerate faces are left out."""
    d = tile.derived()
    valid = np.flatnonzero(~d.degenerate)
    if len(valid) == 0:
        raise NoValidFaces(f"tile {tile.tile_id} has no non-degenerate faces")
    v0, v1, v2 = (np.ascontiguousarray(a[valid]) for a in tile.corners())
    fmin = np.minimum(np.minimum(v0, v1), v2)
    fmax = np.maximum(np.maximum(v0, v1), v2)
    cent = d.cog[valid]
    order = np.arange(len(valid))

    mins, maxs, left, right, start, count = [], [], [], [], [], []

    def new_node(lo, hi):
        pad = 1e-9 * (1.0 + np.abs(lo).max() + np.abs(hi).max())
        mins.append(lo - pad)
        maxs.append(hi + pad)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(mins) - 1

    stack = [(new_node(fmin.min(axis=0), fmax.max(axis=0)), 0, len(order))]
    while stack:
        node, s, e = stack.pop()
        n = e - s
        if n <= leaf_size:
            start[node] = s
            count[node] = n
            continue
        seg = order[s:e]
        c = cent[seg]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        seg = seg[np.argsort(c[:, axis], kind="stable")]
        order[s:e] = seg
        mid = s + n // 2
        kids = []
        for a, b in ((s, mid), (mid, e)):
            sub = order[a:b]
            kids.append((new_node(fmin[sub].min(axis=0), fmax[sub].max(axis=0)), a, b))
        left[node], right[node] = kids[0][0], kids[1][0]
        stack.extend(reversed(kids))

    return FaceBvh(
        tile.tile_id,
        np.array(mins), np.array(maxs),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(start, dtype=np.int64), np.array(count, dtype=np.int64),
        order.astype(np.int64), v0, v1, v2, valid.astype(np.int64),
    )


def bvh_raycast(bvh: FaceBvh, ray: Ray) -> tuple[int, float, np.ndarray] | None:
    """Closest hit ``(face_id, t, hit)`` or ``None`` on a miss."""
    face, t = bvh.cast(ray.origin[None, :], ray.direction[None, :])
    if face[0] < 0:
        return None
    return int(face[0]), float(t[0]), ray.at(t[0])
