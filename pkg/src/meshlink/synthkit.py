"""Deterministic synthetic scenes with ground truth in all modalities.

Templates
---------
``plane``      flat ground square, two tiles.
``cube``       closed cube (bottom face included), split into two tiles.
``roof``       two-plane gable roof with a convex ridge, one tile per plane.
``town``       ground grid with box buildings and a small vehicle, 2x2 tiles.

Points are drawn uniformly on each face (Poisson count from the density),
pushed along the face normal by ``N(0, sigma)`` and finally shifted rigidly
by ``shift``.  The generating face of every point is kept as ground truth.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import InvalidSpec
from .pcma import H3D_SCHEDULE, ThresholdSchedule
from .scene import CameraModel, LabelScheme, MeshTile, PointCloud, TiledMesh

GROUND, ROOF, FACADE, VEGETATION, VEHICLE = 0, 1, 2, 3, 4


class Template(enum.Enum):
    PLANE = "plane"
    CUBE = "cube"
    ROOF = "roof"
    TOWN = "town"


@dataclass
class SceneSpec:
    template: Template = Template.PLANE
    extent: float = 20.0
    density: float = 4.0
    cells: int = 8
    sigma: float = 0.0
    shift: Sequence[float] = (0.0, 0.0, 0.0)
    seed: int = 0
    cameras: Optional[list[CameraModel]] = None
    image_size: tuple[int, int] = (64, 48)
    label_plan: Optional[Dict[tuple[int, int], int]] = None

    def __post_init__(self):
        if isinstance(self.template, str):
            try:
                self.template = Template(self.template.lower())
            except ValueError:
                raise InvalidSpec(f"unknown template {self.template!r}") from None
        if not self.density > 0:
            raise InvalidSpec("density must be positive")
        if not self.extent > 0:
            raise InvalidSpec("extent must be positive")
        if self.cells < 2:
            raise InvalidSpec("need at least 2 cells per side")
        if not self.sigma >= 0:
            raise InvalidSpec("sigma must be non-negative")
        self.shift = tuple(float(s) for s in self.shift)
        if len(self.shift) != 3:
            raise InvalidSpec("shift must be a 3-vector")


@dataclass
class SyntheticScene:
    spec: SceneSpec
    mesh: TiledMesh
    cloud: PointCloud
    cameras: list[CameraModel]
    face_labels: Dict[int, np.ndarray]
    gt_tile: np.ndarray
    gt_face: np.ndarray
    labels: LabelScheme = field(default_factory=LabelScheme.default)


# -- mesh builders ------------------------------------------------------------------

def _grid(origin, du, dv, nu, nv):
    """Vertices and CCW (w.r.t. du x dv) triangles of a parallelogram grid."""
    origin, du, dv = (np.asarray(a, dtype=np.float64) for a in (origin, du, dv))
    i, j = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
    verts = origin + (i.reshape(-1, 1) / nu) * du + (j.reshape(-1, 1) / nv) * dv
    vid = lambda a, b: a * (nv + 1) + b  # noqa: E731
    tris = []
    for a in range(nu):
        for b in range(nv):
            tris.append((vid(a, b), vid(a + 1, b), vid(a + 1, b + 1)))
            tris.append((vid(a, b), vid(a + 1, b + 1), vid(a, b + 1)))
    return verts, np.array(tris, dtype=np.int64)


class _Soup:
    """Accumulates triangles with labels before they are split into tiles."""

    def __init__(self):
        self.tris: list[np.ndarray] = []
        self.labels: list[np.ndarray] = []

    def add(self, verts, faces, label, keep=None):
        t = verts[faces]
        if keep is not None:
            t = t[keep]
        self.tris.append(t)
        self.labels.append(np.full(len(t), label, dtype=np.int32))

    def box(self, lo, hi, label_top, label_side, n=2, bottom_label=None):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        ex, ey, ez = np.diag(hi - lo)
        # outward orientation: du x dv points out of the box
        self.add(*_grid([lo[0], lo[1], hi[2]], ex, ey, n, n), label_top)
        self.add(*_grid(lo, ex, ez, n, n), label_side)
        self.add(*_grid([lo[0], hi[1], lo[2]], ez, ex, n, n), label_side)
        self.add(*_grid(lo, ez, ey, n, n), label_side)
        self.add(*_grid([hi[0], lo[1], lo[2]], ey, ez, n, n), label_side)
        if bottom_label is not None:
            self.add(*_grid(lo, ey, ex, n, n), bottom_label)

    def tiles(self, tile_of) -> tuple[TiledMesh, Dict[int, np.ndarray]]:
        tris = np.concatenate(self.tris)
        labels = np.concatenate(self.labels)
        tid = tile_of(tris.mean(axis=1))
        tiles, face_labels = [], {}
        for t in np.unique(tid):
            sel = tid == t
            tt = tris[sel]
            verts, inv = np.unique(tt.reshape(-1, 3), axis=0, return_inverse=True)
            faces = inv.reshape(-1, 3)
            lab = labels[sel]
            tiles.append(MeshTile(int(t), verts, faces, {"label": lab.copy()}))
            face_labels[int(t)] = lab
        return TiledMesh(tiles), face_labels


def _plane(spec):
    s = _Soup()
    L, n = spec.extent, spec.cells
    s.add(*_grid([0, 0, 0], [L, 0, 0], [0, L, 0], n, n), GROUND)
    return s, lambda c: (c[:, 0] >= L / 2).astype(np.int64)


def _cube(spec):
    s = _Soup()
    L = spec.extent
    side = L / 2
    lo = np.array([L / 4, L / 4, 1.0])
    s.box(lo, lo + side, ROOF, FACADE, n=max(2, spec.cells // 2), bottom_label=GROUND)
    return s, lambda c: (c[:, 0] >= L / 2).astype(np.int64)


def roof_geometry(spec: SceneSpec):
    """Ridge height and slope of the gable roof template."""
    L = spec.extent
    H = L / 4
    return H, float(np.arctan2(H, L / 2))


def _roof(spec):
    s = _Soup()
    L, n = spec.extent, spec.cells
    H, _ = roof_geometry(spec)
    s.add(*_grid([0, 0, 0], [L / 2, 0, H], [0, L, 0], n, n), ROOF)
    s.add(*_grid([L / 2, 0, H], [L / 2, 0, -H], [0, L, 0], n, n), ROOF)
    return s, lambda c: (c[:, 0] >= L / 2).astype(np.int64)


def _town(spec, rng):
    s = _Soup()
    L, n = spec.extent, spec.cells
    cell = L / n
    occupied = np.zeros((n, n), dtype=bool)
    buildings = []
    # one building per quadrant, footprint aligned to the ground grid
    for qx in range(2):
        for qy in range(2):
            w = int(rng.integers(1, max(2, n // 4) + 1))
            d = int(rng.integers(1, max(2, n // 4) + 1))
            x0 = qx * (n // 2) + int(rng.integers(0, max(1, n // 2 - w)))
            y0 = qy * (n // 2) + int(rng.integers(0, max(1, n // 2 - d)))
            h = float(rng.uniform(0.3, 0.8) * L / 4)
            occupied[x0:x0 + w, y0:y0 + d] = True
            buildings.append(((x0 * cell, y0 * cell, 0.0), ((x0 + w) * cell, (y0 + d) * cell, h)))
    verts, faces = _grid([0, 0, 0], [L, 0, 0], [0, L, 0], n, n)
    cell_of = np.repeat(np.arange(n * n), 2)  # two triangles per cell, row a, col b
    keep = ~occupied.reshape(-1)[cell_of]
    s.add(verts, faces, GROUND, keep=keep)
    for lo, hi in buildings:
        s.box(lo, hi, ROOF, FACADE, n=2)
    free = np.argwhere(~occupied)
    a, b = free[int(rng.integers(len(free)))]
    lo = np.array([(a + 0.25) * cell, (b + 0.25) * cell, 0.0])
    s.box(lo, lo + [0.5 * cell, 0.3 * cell, 0.25 * cell], VEHICLE, VEHICLE, n=1)
    return s, lambda c: (c[:, 0] >= L / 2).astype(np.int64) + 2 * (c[:, 1] >= L / 2).astype(np.int64)


def default_rig(spec: SceneSpec) -> list[CameraModel]:
    """Nadir camera over the scene center; town scenes add two obliques."""
    L = spec.extent
    w, h = spec.image_size
    height = 1.5 * L
    focal = 0.5 * min(w, h) / np.tan(np.radians(30))
    center = np.array([L / 2, L / 2, 0.0])
    cams = [CameraModel.look_at(0, center + [0.01 * L, 0.0, height], center, w, h, focal, up=(0, 1, 0))]
    if spec.template is Template.TOWN:
        cams.append(CameraModel.look_at(1, center + [-L, -0.3 * L, L], center, w, h, focal))
        cams.append(CameraModel.look_at(2, center + [0.8 * L, L, 0.9 * L], center, w, h, focal))
    return cams


def _sample(mesh: TiledMesh, spec: SceneSpec, rng):
    pos, gt_tile, gt_face = [], [], []
    for t in mesh.tiles:
        d = t.derived()
        counts = rng.poisson(spec.density * d.area)
        f = np.repeat(np.arange(t.n_faces), counts)
        v0, v1, v2 = (c[f] for c in t.corners())
        r1 = np.sqrt(rng.random(len(f)))
        r2 = rng.random(len(f))
        p = (1 - r1)[:, None] * v0 + (r1 * (1 - r2))[:, None] * v1 + (r1 * r2)[:, None] * v2
        if spec.sigma > 0:
            p = p + rng.normal(0.0, spec.sigma, len(f))[:, None] * d.unit_normal[f]
        pos.append(p)
        gt_tile.append(np.full(len(f), t.tile_id, dtype=np.int64))
        gt_face.append(f)
    return np.concatenate(pos) + np.asarray(spec.shift), np.concatenate(gt_tile), np.concatenate(gt_face)


def generate(spec: SceneSpec) -> SyntheticScene:
    """Build a scene; identical specs give identical scenes."""
    rng = np.random.default_rng(spec.seed)
    builders = {Template.PLANE: _plane, Template.CUBE: _cube, Template.ROOF: _roof}
    if spec.template is Template.TOWN:
        soup, tile_of = _town(spec, rng)
    else:
        soup, tile_of = builders[spec.template](spec)
    mesh, face_labels = soup.tiles(tile_of)
    if spec.label_plan:
        for (tid, fid), lab in spec.label_plan.items():
            face_labels[tid][fid] = lab
            mesh.tile(tid).face_attrs["label"][fid] = lab
    pos, gt_tile, gt_face = _sample(mesh, spec, rng)
    labels = np.empty(len(pos), dtype=np.int32)
    for tid, lab in face_labels.items():
        sel = gt_tile == tid
        labels[sel] = lab[gt_face[sel]]
    intensity = 10.0 * labels + rng.normal(0.0, 1.0, len(pos))
    cloud = PointCloud(pos, {"label": labels, "intensity": intensity})
    cams = spec.cameras if spec.cameras is not None else default_rig(spec)
    return SyntheticScene(spec, mesh, cloud, list(cams), face_labels, gt_tile, gt_face)


# -- constructed non-association cases ----------------------------------------------

@dataclass
class DeadZoneCases:
    """Constructed points with their intended non-association case.

    ``expect_exclude`` / ``expect_include`` say whether the point should be
    linked under the two boundary policies.
    """

    positions: np.ndarray
    cases: list[str]
    expect_exclude: np.ndarray
    expect_include: np.ndarray


def dead_zone_points(spec: SceneSpec, schedule: ThresholdSchedule = H3D_SCHEDULE) -> DeadZoneCases:
    """Points for the roof template exercising cases A1, A2, B1, B2, C1, C2.

    An ``anchor`` point (linked at level 1) accompanies A2, which is the
    point dropped by early stopping on the same face.
    """
    if spec.template is not Template.ROOF:
        raise InvalidSpec("dead zone construction needs the roof template")
    L, n = spec.extent, spec.cells
    if n < 4:
        raise InvalidSpec("dead zone construction needs at least 4 cells")
    H, alpha = roof_geometry(spec)
    n_left = np.array([-np.sin(alpha), 0.0, np.cos(alpha)])
    du = np.array([L / 2, 0.0, H]) / n
    dv = np.array([0.0, L / n, 0.0])
    p1 = schedule.levels[0][1]
    p2 = schedule.levels[1][1] if schedule.n_levels > 1 else None
    theta_max = schedule.theta_max

    def left(a, b, bary):
        # point of the left-plane cell (a, b), lower triangle, from barycentrics
        o = a * du + b * dv
        tri = np.array([o, o + du, o + du + dv])
        return np.asarray(bary) @ tri

    pts, cases, ex, inc = [], [], [], []

    def add(p, case, e, i):
        pts.append(p)
        cases.append(case)
        ex.append(e)
        inc.append(i)

    add(left(1, 0, (1 / 3, 1 / 3, 1 / 3)) + 1.5 * theta_max * n_left, "A1", False, False)
    add(left(1, 2, (0.6, 0.2, 0.2)) + 0.5 * p1 * n_left, "anchor", True, True)
    if p2 is not None and p2 > p1:
        add(left(1, 2, (0.2, 0.4, 0.4)) + 0.5 * (p1 + p2) * n_left, "A2", False, False)
    ridge_x = L / 2
    cos_a = np.cos(alpha)
    add(np.array([ridge_x, 0.5 * L / n, H + 0.5 * p1 / cos_a]), "B1", False, False)
    add(np.array([ridge_x, 2.5 * L / n, H + 0.5 * (p1 + theta_max) / cos_a]), "B2", False, False)
    add(np.array([ridge_x, (2 / n) * L, H]), "C1", False, True)
    o = 2 * du + 1 * dv
    add(o + 0.5 * (du + dv) + 0.5 * p1 * n_left, "C2", False, True)
    return DeadZoneCases(np.array(pts), cases, np.array(ex), np.array(inc))
