"""Geometric primitives: planes, triangles, rays, convex polyhedra, boxes.

Coordinates are plain ``numpy`` arrays of shape ``(3,)`` (or ``(n, 3)`` for
the vectorized helpers).  The world frame is right-handed and Z-up, units are
meters.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegeneratePolygon, DegenerateTriangle, EmptyInput

#: Default absolute tolerance (m) for edge/vertex coincidence.
EDGE_TOLERANCE = 1e-9
#: Inclusive tolerance (m) for half-space membership.
HALFSPACE_TOLERANCE = 1e-9
MIN_AREA = 1e-12
T_MIN = _kernels.T_MIN


def _vec(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class Plane:
    """Oriented plane ``{x : unit_normal . x == offset}``.

    For half-space use, the inside is ``unit_normal . x >= offset``.
    """

    unit_normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = _vec(self.unit_normal)
        norm = np.linalg.norm(n)
        if not abs(norm - 1.0) <= 1e-12:
            raise ValueError(f"plane normal must be unit length, got |n|={norm!r}")
        object.__setattr__(self, "unit_normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = _vec(normal)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ _vec(point)))

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.unit_normal - self.offset


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = _vec(self.direction)
        if not abs(np.linalg.norm(d) - 1.0) <= 1e-12:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", _vec(self.origin))
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, direction) -> "Ray":
        d = _vec(direction)
        return cls(origin, d / np.linalg.norm(d))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.min), _vec(self.max)
        if np.any(lo > hi):
            raise ValueError("Aabb min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def corners(self) -> np.ndarray:
        """The eight corners; bit k of the row index selects max on axis k."""
        return np.array(
            [[(self.max if (i >> k) & 1 else self.min)[k] for k in range(3)] for i in range(8)]
        )

    def edges(self) -> list[tuple[int, int]]:
        """Corner index pairs of the twelve box edges."""
        return [(i, i | (1 << k)) for i in range(8) for k in range(3) if not (i >> k) & 1]

    def faces(self) -> list[np.ndarray]:
        """The six faces as 4x3 vertex loops."""
        c = self.corners()
        loops = []
        for k in range(3):
            a, b = [j for j in range(3) if j != k]
            for side in (0, 1):
                base = side << k
                idx = [base, base | (1 << a), base | (1 << a) | (1 << b), base | (1 << b)]
                loops.append(c[idx])
        return loops

    def contains(self, p, tol: float = 0.0) -> bool:
        p = _vec(p)
        return bool(np.all(p >= self.min - tol) and np.all(p <= self.max + tol))

    def close_to(self, other: "Aabb", tol: float) -> bool:
        return bool(
            np.all(np.abs(self.min - other.min) <= tol) and np.all(np.abs(self.max - other.max) <= tol)
        )


class PointClass(enum.Enum):
    INSIDE = "inside"
    ON_BOUNDARY = "on_boundary"
    OUTSIDE = "outside"


@dataclass
class ConvexPolyhedron:
    """Bounded convex polyhedron described both by half-spaces and by its
    boundary (vertices, edges and polygonal faces).

    Build one with :meth:`from_halfspaces`.
    """

    halfspaces: list[Plane]
    vertices: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    edges: list[tuple[int, int]] = field(default_factory=list)
    faces: list[list[int]] = field(default_factory=list)

    @classmethod
    def from_halfspaces(cls, planes: list[Plane], tol: float = HALFSPACE_TOLERANCE) -> "ConvexPolyhedron":
        normals = np.array([p.unit_normal for p in planes])
        offsets = np.array([p.offset for p in planes])
        verts: list[np.ndarray] = []
        for i, j, k in itertools.combinations(range(len(planes)), 3):
            a = normals[[i, j, k]]
            if abs(np.linalg.det(a)) < 1e-12:
                continue
            x = np.linalg.solve(a, offsets[[i, j, k]])
            if np.all(normals @ x - offsets >= -tol * max(1.0, np.abs(x).max())):
                if not any(np.linalg.norm(x - v) <= 1e-7 * max(1.0, np.abs(x).max()) for v in verts):
                    verts.append(x)
        vertices = np.array(verts) if verts else np.empty((0, 3))
        scale = max(1.0, float(np.abs(vertices).max())) if len(vertices) else 1.0
        on = np.abs(vertices @ normals.T - offsets) <= 1e-7 * scale  # (n_vert, n_planes)
        edges = []
        for a, b in itertools.combinations(range(len(vertices)), 2):
            if np.count_nonzero(on[a] & on[b]) >= 2:
                edges.append((a, b))
        faces = []
        for p, plane in enumerate(planes):
            idx = np.flatnonzero(on[:, p])
            if len(idx) < 3:
                continue
            faces.append(_order_loop(vertices, idx, plane.unit_normal))
        return cls(list(planes), vertices, edges, faces)

    def face_loops(self) -> list[np.ndarray]:
        return [self.vertices[f] for f in self.faces]


def _order_loop(vertices: np.ndarray, idx: np.ndarray, normal: np.ndarray) -> list[int]:
    pts = vertices[idx]
    c = pts.mean(axis=0)
    u = pts[0] - c
    if np.linalg.norm(u) == 0:
        u = np.cross(normal, [1.0, 0.0, 0.0])
    u = u / np.linalg.norm(u)
    w = np.cross(normal, u)
    ang = np.arctan2((pts - c) @ w, (pts - c) @ u)
    return [int(i) for i in idx[np.argsort(ang, kind="stable")]]


# -- planes -----------------------------------------------------------------

def project_point_to_plane(p, plane: Plane) -> tuple[np.ndarray, float]:
    """Orthogonal foot point and signed distance (positive along the normal)."""
    p = _vec(p)
    d = float(p @ plane.unit_normal - plane.offset)
    return p - d * plane.unit_normal, d


# -- triangles --------------------------------------------------------------

def triangle_normal_area(v0, v1, v2) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals (counter-clockwise orientation) and areas, vectorized."""
    cr = np.cross(np.asarray(v1) - v0, np.asarray(v2) - v0)
    twice = np.linalg.norm(cr, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = cr / twice[..., None]
    return n, 0.5 * twice


def edge_distances(p, v0, v1, v2) -> np.ndarray:
    """Signed in-plane distances of ``p`` to the three edge lines.

    Column ``i`` holds the distance to the edge opposite vertex ``i``,
    positive towards the interior.  Computed from barycentric coordinates
    scaled by the matching triangle heights.  Works row-wise on ``(n, 3)``
    inputs.
    """
    p, v0, v1, v2 = (np.asarray(a, dtype=np.float64) for a in (p, v0, v1, v2))
    e0 = v1 - v0
    e1 = v2 - v0
    w = p - v0
    d00 = np.einsum("...i,...i", e0, e0)
    d01 = np.einsum("...i,...i", e0, e1)
    d11 = np.einsum("...i,...i", e1, e1)
    d20 = np.einsum("...i,...i", w, e0)
    d21 = np.einsum("...i,...i", w, e1)
    denom = d00 * d11 - d01 * d01
    lam1 = (d11 * d20 - d01 * d21) / denom
    lam2 = (d00 * d21 - d01 * d20) / denom
    lam0 = 1.0 - lam1 - lam2
    twice_area = np.sqrt(denom)
    len0 = np.linalg.norm(v2 - v1, axis=-1)
    len1 = np.sqrt(d11)
    len2 = np.sqrt(d00)
    return np.stack([lam0 * twice_area / len0, lam1 * twice_area / len1, lam2 * twice_area / len2], axis=-1)


def classify_edge_distances(dist: np.ndarray, tol: float) -> np.ndarray:
    """Vectorized classification codes: 0 inside, 1 on boundary, 2 outside."""
    out = np.full(dist.shape[:-1], 1, dtype=np.int8)
    out[np.all(dist > tol, axis=-1)] = 0
    out[np.any(dist < -tol, axis=-1)] = 2
    return out


_CODES = (PointClass.INSIDE, PointClass.ON_BOUNDARY, PointClass.OUTSIDE)


def classify_point_in_triangle(p, vertices, edge_tolerance: float = EDGE_TOLERANCE) -> PointClass:
    """Locate a point lying in the triangle's plane relative to the triangle.

    The tolerance is a distance in meters from the edge lines.
    """
    v0, v1, v2 = (_vec(v) for v in vertices)
    _, area = triangle_normal_area(v0, v1, v2)
    if not area >= MIN_AREA:
        raise DegenerateTriangle(f"triangle area {area!r} below {MIN_AREA}")
    code = classify_edge_distances(edge_distances(_vec(p), v0, v1, v2), edge_tolerance)
    return _CODES[int(code)]


def ray_triangle_intersect(ray: Ray, vertices) -> tuple[float, np.ndarray] | None:
    """Nearest intersection ``(t, hit)`` with ``t > 1e-9``, boundary inclusive."""
    v0, v1, v2 = (_vec(v) for v in vertices)
    _, area = triangle_normal_area(v0, v1, v2)
    if not area >= MIN_AREA:
        raise DegenerateTriangle(f"triangle area {area!r} below {MIN_AREA}")
    o, d = ray.origin, ray.direction
    t = _kernels.ray_tri(o[0], o[1], o[2], d[0], d[1], d[2], *v0, *v1, *v2)
    if np.isnan(t):
        return None
    return float(t), ray.at(t)


# -- polyhedra and polygons -------------------------------------------------

def point_in_polyhedron(p, poly: ConvexPolyhedron, tol: float = HALFSPACE_TOLERANCE) -> bool:
    p = _vec(p)
    return all(h.signed_distance(p) >= -tol for h in poly.halfspaces)


def points_in_halfspaces(points: np.ndarray, planes: list[Plane], tol: float = HALFSPACE_TOLERANCE) -> np.ndarray:
    n = np.array([h.unit_normal for h in planes])
    off = np.array([h.offset for h in planes])
    return np.all(np.asarray(points) @ n.T - off >= -tol, axis=-1)


def _polygon_frame(polygon: np.ndarray):
    # Newell normal is robust for any planar loop
    nxt = np.roll(polygon, -1, axis=0)
    normal = np.array([
        np.sum((polygon[:, 1] - nxt[:, 1]) * (polygon[:, 2] + nxt[:, 2])),
        np.sum((polygon[:, 2] - nxt[:, 2]) * (polygon[:, 0] + nxt[:, 0])),
        np.sum((polygon[:, 0] - nxt[:, 0]) * (polygon[:, 1] + nxt[:, 1])),
    ])
    area = 0.5 * np.linalg.norm(normal)
    if not area >= MIN_AREA:
        raise DegeneratePolygon(f"polygon area {area!r} below {MIN_AREA}")
    return normal / (2.0 * area), area


def _in_convex_polygon(x: np.ndarray, polygon: np.ndarray, normal: np.ndarray, tol: float) -> bool:
    nxt = np.roll(polygon, -1, axis=0)
    edge = nxt - polygon
    inward = np.cross(normal, edge)
    inward /= np.linalg.norm(inward, axis=1)[:, None]
    return bool(np.all(np.einsum("ij,ij->i", x - polygon, inward) >= -tol))


def _segments_cross_2d(a, b, c, d, tol) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    def on_seg(p, q, r):
        return (min(p[0], q[0]) - tol <= r[0] <= max(p[0], q[0]) + tol
                and min(p[1], q[1]) - tol <= r[1] <= max(p[1], q[1]) + tol)

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    for p, q, r, o in ((a, b, c, o1), (a, b, d, o2), (c, d, a, o3), (c, d, b, o4)):
        if abs(o) <= tol * max(1.0, np.hypot(q[0] - p[0], q[1] - p[1])) and on_seg(p, q, r):
            return True
    return False


def segment_polygon_intersect(a, b, polygon, tol: float = HALFSPACE_TOLERANCE) -> bool:
    """Whether segment ``[a, b]`` touches a planar convex polygon (inclusive)."""
    a, b = _vec(a), _vec(b)
    polygon = np.asarray(polygon, dtype=np.float64)
    normal, _ = _polygon_frame(polygon)
    off = float(normal @ polygon.mean(axis=0))
    da, db = float(a @ normal - off), float(b @ normal - off)
    if (da > tol and db > tol) or (da < -tol and db < -tol):
        return False
    if abs(da) <= tol and abs(db) <= tol:
        if _in_convex_polygon(a, polygon, normal, tol) or _in_convex_polygon(b, polygon, normal, tol):
            return True
        u = polygon[1] - polygon[0]
        u /= np.linalg.norm(u)
        w = np.cross(normal, u)
        to2 = lambda x: np.array([(x - polygon[0]) @ u, (x - polygon[0]) @ w])  # noqa: E731
        a2, b2 = to2(a), to2(b)
        loop = [to2(x) for x in polygon]
        return any(_segments_cross_2d(a2, b2, loop[i], loop[(i + 1) % len(loop)], tol) for i in range(len(loop)))
    if abs(da) <= tol:
        x = a
    elif abs(db) <= tol:
        x = b
    else:
        x = a + (da / (da - db)) * (b - a)
    return _in_convex_polygon(x, polygon, normal, tol)


def aabb_of(points) -> Aabb:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("cannot bound an empty point set")
    return Aabb(pts.min(axis=0), pts.max(axis=0))
