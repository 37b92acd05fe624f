"""Label and feature transfer along the established links.

One-to-many directions copy values; many-to-one directions aggregate them,
labels by majority vote and features by component-wise median.

Sentinels: ``-1`` marks an unlabeled (or unlinked) target; pixels that are
linked to a face without a label get ``-2``.  Unlinked feature targets are
zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import EmptyInput, InputError, MissingAssociation, UnknownAttribute
from .imgma import SparsePixelCloud
from .pcimga import PointPixelLinks
from .pcma import FaceAssociation
from .scene import UNLABELED, PointCloud, TiledMesh

LINKED_UNLABELED = -2


class Direction(enum.Enum):
    MESH_TO_PC = "mesh-to-pc"
    PC_TO_MESH = "pc-to-mesh"
    MESH_TO_IMG = "mesh-to-img"
    IMG_TO_MESH = "img-to-mesh"
    PC_TO_IMG = "pc-to-img"
    IMG_TO_PC = "img-to-pc"


class Kind(enum.Enum):
    LABEL = "label"
    FEATURE = "feature"


class PixelRule(enum.Enum):
    """How explicit point-to-image transfer fills a pixel hit by several points."""

    MIN_DEPTH = "min-depth"
    ALL = "all"


class Mode(enum.Enum):
    IMPLICIT = "implicit"
    EXPLICIT = "explicit"


_PC_IMG = {Direction.PC_TO_IMG, Direction.IMG_TO_PC}


@dataclass(frozen=True)
class TransferSpec:
    """What to move where.  ``columns`` maps source column -> target column."""

    direction: Direction
    kind: Kind
    columns: tuple[tuple[str, str], ...]
    mode: Optional[Mode] = None
    pixel_rule: PixelRule = PixelRule.MIN_DEPTH

    def __post_init__(self):
        if (self.direction in _PC_IMG) != (self.mode is not None):
            raise InputError("mode is required for, and only for, point/image transfers")
        if not self.columns:
            raise InputError("no attribute to transfer")
        if self.kind is Kind.LABEL and len(self.columns) != 1:
            raise InputError("label transfer moves exactly one column")


@dataclass
class AggregationResult:
    value: object
    support: int
    unanimity: bool


@dataclass
class TransferReport:
    direction: str
    kind: str
    mode: Optional[str]
    targets: int = 0
    transferred: int = 0
    unlabeled: int = 0
    aggregated: int = 0
    unanimous: int = 0
    dropped: int = 0

    @property
    def unanimity_rate(self) -> float:
        return self.unanimous / self.aggregated if self.aggregated else float("nan")

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["unanimity_rate"] = self.unanimity_rate
        return d


@dataclass
class Associations:
    """Bundle of whatever links have been computed."""

    faces: Optional[FaceAssociation] = None
    pixels: Optional[Dict[int, SparsePixelCloud]] = None
    links: Optional[PointPixelLinks] = None


@dataclass
class SceneData:
    cloud: Optional[PointCloud] = None
    mesh: Optional[TiledMesh] = None
    pixels: Dict[int, SparsePixelCloud] = field(default_factory=dict)


# -- aggregation primitives ----------------------------------------------------

def majority_vote(labels: Sequence[int]) -> int:
    """Most frequent label ignoring negatives; ties go to the lowest id.
    Returns -1 when nothing is left to vote on."""
    return vote(labels).value


def vote(labels: Sequence[int]) -> AggregationResult:
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    lab = lab[lab >= 0]
    if len(lab) == 0:
        return AggregationResult(UNLABELED, 0, False)
    vals, counts = np.unique(lab, return_counts=True)
    best = vals[np.argmax(counts)]  # argmax returns the first, i.e. lowest, id
    return AggregationResult(int(best), len(lab), len(vals) == 1)


def median_aggregate(vectors, dim: Optional[int] = None) -> np.ndarray:
    """Component-wise median; even counts average the middle pair.

    An empty input yields the zero vector of length ``dim``.
    """
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        if dim is None:
            raise EmptyInput("dimension unknown for an empty median")
        return np.zeros(dim)
    arr = arr.reshape(len(arr), -1)
    return np.median(arr, axis=0)


def grouped_vote(groups: np.ndarray, labels: np.ndarray, n_groups: int):
    """Majority vote per group id in ``[0, n_groups)``.

    Returns ``(label, support, unanimous)`` arrays; empty groups get -1.
    """
    groups = np.asarray(groups, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    ok = labels >= 0
    g, lab = groups[ok], labels[ok]
    out = np.full(n_groups, UNLABELED, dtype=np.int64)
    support = np.bincount(g, minlength=n_groups) if len(g) else np.zeros(n_groups, dtype=np.int64)
    distinct = np.zeros(n_groups, dtype=np.int64)
    if len(g):
        pairs, counts = np.unique(np.stack([g, lab], axis=1), axis=0, return_counts=True)
        np.add.at(distinct, pairs[:, 0], 1)
        order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
        first = np.ones(len(order), dtype=bool)
        pg = pairs[order, 0]
        first[1:] = pg[1:] != pg[:-1]
        out[pg[first]] = pairs[order[first], 1]
    return out, support, distinct == 1


def grouped_median(groups: np.ndarray, values: np.ndarray, n_groups: int):
    """Median per group; NaN values are ignored, empty groups give 0.

    Returns ``(median, support, unanimous)``.
    """
    groups = np.asarray(groups, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(values)
    g, v = groups[ok], values[ok]
    order = np.lexsort((v, g))
    g, v = g[order], v[order]
    support = np.bincount(g, minlength=n_groups) if len(g) else np.zeros(n_groups, dtype=np.int64)
    start = np.zeros(n_groups + 1, dtype=np.int64)
    np.cumsum(support, out=start[1:])
    out = np.zeros(n_groups)
    has = support > 0
    lo = start[:-1] + (support - 1) // 2
    hi = start[:-1] + support // 2
    out[has] = 0.5 * (v[lo[has]] + v[hi[has]])
    last = start[1:] - 1
    unanimous = np.zeros(n_groups, dtype=bool)
    unanimous[has] = v[start[:-1][has]] == v[last[has]]
    return out, support, unanimous


# -- plumbing -------------------------------------------------------------------

def _face_keys(tile, face):
    return (np.asarray(tile, dtype=np.int64) << 32) | np.asarray(face, dtype=np.int64)


def _mesh_keys(mesh: TiledMesh) -> np.ndarray:
    return np.concatenate([_face_keys(np.full(t.n_faces, t.tile_id), np.arange(t.n_faces))
                           for t in sorted(mesh.tiles, key=lambda t: t.tile_id)])


def _mesh_column(mesh: TiledMesh, name: str) -> np.ndarray:
    cols = []
    for t in sorted(mesh.tiles, key=lambda t: t.tile_id):
        if name not in t.face_attrs:
            raise UnknownAttribute(f"tile {t.tile_id} has no face column {name!r}")
        cols.append(np.asarray(t.face_attrs[name]))
    return np.concatenate(cols)


def _set_mesh_column(mesh: TiledMesh, name: str, values: np.ndarray) -> None:
    pos = 0
    for t in sorted(mesh.tiles, key=lambda t: t.tile_id):
        t.face_attrs[name] = values[pos:pos + t.n_faces].copy()
        pos += t.n_faces


def _lookup(keys_sorted: np.ndarray, q: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(keys_sorted, q)
    pos_c = np.minimum(pos, max(len(keys_sorted) - 1, 0))
    found = (pos < len(keys_sorted)) & (keys_sorted[pos_c] == q) if len(keys_sorted) else np.zeros(len(q), bool)
    return np.where(found, pos_c, -1)


def _column(container: dict, name: str, what: str) -> np.ndarray:
    if name not in container:
        raise UnknownAttribute(f"{what} has no column {name!r}")
    return np.asarray(container[name])


def _empty_value(kind: Kind):
    return UNLABELED if kind is Kind.LABEL else 0.0


def _dtype(kind: Kind):
    return np.int32 if kind is Kind.LABEL else np.float64


def _aggregate(kind: Kind, groups, values, n_groups):
    if kind is Kind.LABEL:
        return grouped_vote(groups, values, n_groups)
    return grouped_median(groups, values, n_groups)


def _require(obj, what):
    if obj is None:
        raise MissingAssociation(f"{what} has not been computed")
    return obj


# -- directions -------------------------------------------------------------------

def _pc_to_faces(kind, src, scene: SceneData, faces: FaceAssociation, report: TransferReport):
    """Aggregate a point column per face, over all mesh faces (global order)."""
    mesh = scene.mesh
    keys = _mesh_keys(mesh)
    linked = np.flatnonzero(faces.point_face >= 0)
    g = _lookup(keys, _face_keys(faces.point_tile[linked], faces.point_face[linked]))
    vals = _column(scene.cloud.attributes, src, "point cloud")[linked[g >= 0]]
    agg, support, unan = _aggregate(kind, g[g >= 0], vals, len(keys))
    report.aggregated += int((support > 0).sum())
    report.unanimous += int((unan & (support > 0)).sum())
    return agg, support


def _img_to_faces(kind, src, scene: SceneData, pixels: Dict[int, SparsePixelCloud], report: TransferReport):
    keys = _mesh_keys(scene.mesh)
    groups, vals = [], []
    for iid in sorted(pixels):
        spc = pixels[iid]
        v = _column(spc.attributes, src, f"image {iid}")
        g = _lookup(keys, _face_keys(spc.tile_id, spc.face_id))
        groups.append(g[g >= 0])
        vals.append(v[g >= 0])
    groups = np.concatenate(groups) if groups else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    agg, support, unan = _aggregate(kind, groups, vals, len(keys))
    report.aggregated += int((support > 0).sum())
    report.unanimous += int((unan & (support > 0)).sum())
    return agg, support


def _faces_to_points(kind, face_vals, scene: SceneData, faces: FaceAssociation):
    keys = _mesh_keys(scene.mesh)
    out = np.full(len(faces.point_face), _empty_value(kind), dtype=_dtype(kind))
    linked = np.flatnonzero(faces.point_face >= 0)
    g = _lookup(keys, _face_keys(faces.point_tile[linked], faces.point_face[linked]))
    ok = g >= 0
    out[linked[ok]] = face_vals[g[ok]]
    return out


def _faces_to_pixels(kind, face_vals, scene: SceneData, pixels: Dict[int, SparsePixelCloud]):
    keys = _mesh_keys(scene.mesh)
    res = {}
    for iid in sorted(pixels):
        spc = pixels[iid]
        g = _lookup(keys, _face_keys(spc.tile_id, spc.face_id))
        if kind is Kind.LABEL:
            v = np.full(len(spc), LINKED_UNLABELED, dtype=np.int32)
            ok = g >= 0
            v[ok] = np.where(face_vals[g[ok]] >= 0, face_vals[g[ok]], LINKED_UNLABELED)
        else:
            v = np.zeros(len(spc))
            v[g >= 0] = face_vals[g[g >= 0]]
        res[iid] = v
    return res


def _count_targets(report, kind, arrays):
    for a in arrays:
        report.targets += len(a)
        if kind is Kind.LABEL:
            report.transferred += int((a >= 0).sum())
            report.unlabeled += int((a < 0).sum())
        else:
            report.transferred += len(a)


def run_transfer(spec: TransferSpec, scene: SceneData, assoc: Associations) -> TransferReport:
    """Execute one transfer, writing target columns in place."""
    kind, d = spec.kind, spec.direction
    report = TransferReport(d.value, kind.value, spec.mode.value if spec.mode else None)
    for src, dst in spec.columns:
        if d is Direction.MESH_TO_PC:
            faces = _require(assoc.faces, "point/mesh association")
            vals = _faces_to_points(kind, _mesh_column(scene.mesh, src), scene, faces)
            scene.cloud.attributes[dst] = vals
            _count_targets(report, kind, [vals])
        elif d is Direction.PC_TO_MESH:
            faces = _require(assoc.faces, "point/mesh association")
            agg, _ = _pc_to_faces(kind, src, scene, faces, report)
            _set_mesh_column(scene.mesh, dst, agg.astype(_dtype(kind)))
            _count_targets(report, kind, [agg])
        elif d is Direction.MESH_TO_IMG:
            pixels = _require(assoc.pixels, "image/mesh association")
            res = _faces_to_pixels(kind, _mesh_column(scene.mesh, src), scene, pixels)
            for iid, v in res.items():
                pixels[iid].attributes[dst] = v
            _count_targets(report, kind, res.values())
        elif d is Direction.IMG_TO_MESH:
            pixels = _require(assoc.pixels, "image/mesh association")
            agg, _ = _img_to_faces(kind, src, scene, pixels, report)
            _set_mesh_column(scene.mesh, dst, agg.astype(_dtype(kind)))
            _count_targets(report, kind, [agg])
        elif d is Direction.PC_TO_IMG:
            pixels = _require(assoc.pixels, "image/mesh association")
            if spec.mode is Mode.IMPLICIT:
                faces = _require(assoc.faces, "point/mesh association")
                agg, _ = _pc_to_faces(kind, src, scene, faces, report)
                res = _faces_to_pixels(kind, agg, scene, pixels)
            else:
                links = _require(assoc.links, "explicit point/pixel links")
                res = _points_to_pixels_explicit(kind, src, scene, pixels, links, report, spec.pixel_rule)
            for iid, v in res.items():
                pixels[iid].attributes[dst] = v
            _count_targets(report, kind, res.values())
        elif d is Direction.IMG_TO_PC:
            pixels = _require(assoc.pixels, "image/mesh association")
            if spec.mode is Mode.IMPLICIT:
                faces = _require(assoc.faces, "point/mesh association")
                agg, _ = _img_to_faces(kind, src, scene, pixels, report)
                vals = _faces_to_points(kind, agg, scene, faces)
            else:
                links = _require(assoc.links, "explicit point/pixel links")
                vals = _pixels_to_points_explicit(kind, src, scene, pixels, links, report)
            scene.cloud.attributes[dst] = vals
            _count_targets(report, kind, [vals])
    return report


def _points_to_pixels_explicit(kind, src, scene, pixels, links: PointPixelLinks, report,
                               rule: PixelRule = PixelRule.MIN_DEPTH):
    col = _column(scene.cloud.attributes, src, "point cloud")
    res = {}
    for iid in sorted(pixels):
        spc = pixels[iid]
        v = np.full(len(spc), _empty_value(kind), dtype=_dtype(kind))
        lk = links.images.get(iid)
        if lk is not None:
            pts, r, c, _ = lk.retained()
            rec = spc.lookup(r, c)
            report.dropped += int((rec < 0).sum())
            if rule is PixelRule.MIN_DEPTH:
                v[rec[rec >= 0]] = col[pts[rec >= 0]]
            else:
                rec_all = spc.lookup(lk.rows, lk.cols)
                ok = rec_all >= 0
                agg, support, unan = _aggregate(kind, rec_all[ok], col[lk.points[ok]], len(spc))
                hit = support > 0
                v[hit] = agg[hit]
                report.aggregated += int(hit.sum())
                report.unanimous += int((unan & hit).sum())
        res[iid] = v
    return res


def _pixels_to_points_explicit(kind, src, scene, pixels, links: PointPixelLinks, report):
    groups, vals = [], []
    for iid in sorted(links.images):
        if iid not in pixels:
            continue
        spc = pixels[iid]
        lk = links.images[iid]
        col = _column(spc.attributes, src, f"image {iid}")
        rec = spc.lookup(lk.rows, lk.cols)
        ok = rec >= 0
        report.dropped += int((~ok).sum())
        groups.append(lk.points[ok])
        vals.append(col[rec[ok]])
    n = len(scene.cloud)
    groups = np.concatenate(groups) if groups else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    agg, support, unan = _aggregate(kind, groups, vals, n)
    report.aggregated += int((support > 0).sum())
    report.unanimous += int((unan & (support > 0)).sum())
    return agg.astype(_dtype(kind))
