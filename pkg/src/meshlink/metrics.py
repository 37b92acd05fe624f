"""Evaluation of the point/mesh association.

The forward/backward check votes ground-truth point labels onto faces and
copies them back; disagreement with the ground truth measures how
consistent the links are (and exposes label noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllEmpty, NoGroundTruth
from .pcma import FaceAssociation
from .scene import PointCloud, TiledMesh
from .transfer import grouped_vote

WEIGHTING_NOTE = "weighted average precision uses ground-truth class support as weights"


@dataclass
class ConsistencyReport:
    points_checked: int
    points_consistent: int
    mixed_faces: int
    associated_faces: int
    classes: np.ndarray
    confusion: np.ndarray
    weighted_average_precision: float
    inconsistent_points: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, dtype=np.int64))
    weighting: str = WEIGHTING_NOTE

    @property
    def consistency_rate(self) -> float:
        return self.points_consistent / self.points_checked if self.points_checked else float("nan")

    @property
    def mixed_face_fraction(self) -> float:
        return self.mixed_faces / self.associated_faces if self.associated_faces else float("nan")


@dataclass
class AssociationRates:
    face_rate: float
    area_rate: float
    point_rate: float
    unassociated_by_class: dict = field(default_factory=dict)


def weighted_average_precision(confusion) -> float:
    """Support-weighted mean of per-class precision.

    Rows are ground truth, columns predictions.  Classes never predicted
    are left out together with their weight.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.size == 0 or cm.sum() == 0:
        raise AllEmpty("confusion matrix is empty")
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    ok = predicted > 0
    if not np.any(support[ok] > 0):
        raise AllEmpty("no predicted class has ground-truth support")
    precision = np.diag(cm)[ok] / predicted[ok]
    w = support[ok]
    return float(np.sum(w * precision) / np.sum(w))


def forward_backward_check(cloud: PointCloud, assoc: FaceAssociation, label: str = "label") -> ConsistencyReport:
    """Vote labels onto faces (forward), copy them back (backward) and
    compare against the ground truth on associated, labeled points."""
    if label not in cloud.attributes:
        raise NoGroundTruth(f"cloud has no {label!r} column")
    gt = np.asarray(cloud.attributes[label], dtype=np.int64)
    linked = np.flatnonzero((assoc.point_face >= 0) & (gt >= 0))
    key = (assoc.point_tile[linked] << 32) | assoc.point_face[linked]
    faces, group = np.unique(key, return_inverse=True)
    voted, support, unanimous = grouped_vote(group, gt[linked], len(faces))
    back = voted[group]
    ok = back == gt[linked]
    classes = np.unique(np.concatenate([gt[linked], back]))
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    if k:
        np.add.at(cm, (np.searchsorted(classes, gt[linked]), np.searchsorted(classes, back)), 1)
    wap = weighted_average_precision(cm) if cm.sum() else float("nan")
    return ConsistencyReport(
        points_checked=len(linked),
        points_consistent=int(ok.sum()),
        mixed_faces=int((~unanimous & (support > 0)).sum()),
        associated_faces=len(faces),
        classes=classes,
        confusion=cm,
        weighted_average_precision=wap,
        inconsistent_points=linked[~ok],
    )


def association_rates(mesh: TiledMesh, cloud: PointCloud, assoc: FaceAssociation,
                      label: str = "label") -> AssociationRates:
    n_faces = 0
    n_assoc = 0
    area_all = 0.0
    area_assoc = 0.0
    for t in sorted(mesh.tiles, key=lambda t: t.tile_id):
        area = t.derived().area
        has = np.zeros(t.n_faces, dtype=bool)
        if t.tile_id in assoc.tiles:
            has = assoc.tiles[t.tile_id].counts() > 0
        n_faces += t.n_faces
        n_assoc += int(has.sum())
        area_all += float(area.sum())
        area_assoc += float(area[has].sum())
    n_pts = assoc.n_points
    hist = {}
    if label in cloud.attributes:
        lab = np.asarray(cloud.attributes[label])[assoc.point_face < 0]
        vals, counts = np.unique(lab, return_counts=True)
        hist = {int(v): int(c) for v, c in zip(vals, counts)}
    return AssociationRates(
        face_rate=n_assoc / n_faces if n_faces else 0.0,
        area_rate=area_assoc / area_all if area_all else 0.0,
        point_rate=float((assoc.point_face >= 0).sum()) / n_pts if n_pts else 0.0,
        unassociated_by_class=hist,
    )
