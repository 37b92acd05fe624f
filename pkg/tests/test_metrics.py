import numpy as np
import pytest

from meshlink import synthkit
from meshlink.errors import AllEmpty, NoGroundTruth
from meshlink.metrics import WEIGHTING_NOTE, association_rates, forward_backward_check, weighted_average_precision
from meshlink.pcma import FaceAssociation, pcma_run
from meshlink.scene import MeshTile, PointCloud, TiledMesh


def test_wap_known_matrix():
    # precisions 1 and 10/12 weighted by supports 10 and 10
    assert weighted_average_precision([[8, 2], [0, 10]]) == pytest.approx(11 / 12, abs=1e-12)


def test_wap_perfect_and_empty():
    assert weighted_average_precision(np.diag([3, 4, 5])) == 1.0
    with pytest.raises(AllEmpty):
        weighted_average_precision(np.zeros((2, 2)))
    with pytest.raises(AllEmpty):
        weighted_average_precision([])


def _two_faces():
    v = [[0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0]]
    return TiledMesh([MeshTile(0, v, [[0, 1, 2], [0, 2, 3]])])


def test_forward_backward_mixed_face():
    mesh = _two_faces()
    # face 0 holds labels (a, a, b), face 1 is homogeneous
    labels = np.array([1, 1, 2, 3, 3], dtype=np.int32)
    cloud = PointCloud(np.zeros((5, 3)), {"label": labels})
    assoc = FaceAssociation.from_backlinks(mesh, np.zeros(5, int), np.array([0, 0, 0, 1, 1]))
    rep = forward_backward_check(cloud, assoc)
    assert rep.points_checked == 5 and rep.points_consistent == 4
    assert rep.inconsistent_points.tolist() == [2]
    assert rep.mixed_faces == 1 and rep.associated_faces == 2
    sub = cloud.attributes["label"][:3]
    assert np.mean(sub == 1) == pytest.approx(2 / 3)
    assert rep.weighting == WEIGHTING_NOTE


def test_forward_backward_homogeneous_is_perfect():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=4))
    a = pcma_run(sc.mesh, sc.cloud)
    rep = forward_backward_check(sc.cloud, a)
    assert rep.consistency_rate == 1.0
    assert rep.weighted_average_precision == 1.0
    assert rep.mixed_faces == 0


def test_no_ground_truth():
    mesh = _two_faces()
    cloud = PointCloud(np.zeros((1, 3)))
    assoc = FaceAssociation.from_backlinks(mesh, [0], [0])
    with pytest.raises(NoGroundTruth):
        forward_backward_check(cloud, assoc)


def test_association_rates():
    mesh = _two_faces()
    cloud = PointCloud(np.zeros((4, 3)), {"label": np.array([0, 0, 5, 5], dtype=np.int32)})
    assoc = FaceAssociation.from_backlinks(mesh, [0, 0, -1, -1], [0, 0, -1, -1])
    r = association_rates(mesh, cloud, assoc)
    assert r.face_rate == 0.5
    assert r.area_rate == pytest.approx(0.5)
    assert r.point_rate == 0.5
    assert r.unassociated_by_class == {5: 2}
