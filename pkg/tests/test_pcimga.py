import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshlink import synthkit
from meshlink.imgma import SparsePixelCloud, imgma_run
from meshlink.pcimga import link_image, min_depth_per_pixel, pcimga_explicit, visible_points
from meshlink.pcma import FaceAssociation, pcma_run
from meshlink.scene import CameraModel, MeshTile, PointCloud, TiledMesh


def nadir(image_id=0, x=0.0, y=0.0, height=10.0, w=64, h=48, focal=32.0):
    return CameraModel.look_at(image_id, [x, y, height], [x, y, 0.0], w, h, focal, up=(0, 1, 0))


def _assoc(tile_ids, face_ids):
    pt = np.asarray(tile_ids)
    pf = np.asarray(face_ids)
    return FaceAssociation(len(pt), {}, pt, pf)


def test_visible_points_follow_faces():
    a = _assoc([0, 0, 1, -1], [0, 1, 0, -1])
    spc1 = SparsePixelCloud(1, [0], [0], [1.0], [0], [0])
    spc2 = SparsePixelCloud(2, [0, 0], [0, 1], [1.0, 1.0], [0, 1], [1, 0])
    vis = visible_points(a, {1: spc1, 2: spc2})
    assert vis[1].tolist() == [0]
    assert vis[2].tolist() == [1, 2]


def test_occluded_face_points_are_invisible():
    # a small roof hovering over a ground square hides part of the ground
    ground = MeshTile(0, [[-5, -5, 0], [5, -5, 0], [5, 5, 0], [-5, 5, 0]], [[0, 1, 2], [0, 2, 3]])
    roof = MeshTile(1, [[-8, -8, 3], [8, -8, 3], [8, 8, 3], [-8, 8, 3]], [[0, 1, 2], [0, 2, 3]])
    mesh = TiledMesh([ground, roof])
    cloud = PointCloud(np.array([[1.0, -2.0, 0.0], [1.0, -2.0, 3.0]]))
    cam = nadir()
    a = pcma_run(mesh, cloud)
    _, clouds = imgma_run([cam], mesh)
    vis = visible_points(a, clouds)
    assert vis[0].tolist() == [1]
    # the ground point would still project into the image
    r, c, d = cam.project_points(cloud.positions[:1])
    assert 0 <= r[0] < cam.height and 0 <= c[0] < cam.width


def test_principal_ray_point():
    cam = nadir(w=64, h=48, focal=32.0)
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    lk = link_image(cloud, cam, np.array([0]))
    p, r, c, d = lk.retained()
    assert (p.tolist(), r.tolist(), c.tolist()) == ([0], [24], [32])
    assert d[0] == pytest.approx(10.0)


def test_min_depth_keeps_nearer_point():
    cam = nadir()
    ray = cam.pixel_dirs(np.array([10]), np.array([20]))[0]
    cloud = PointCloud(np.stack([cam.C + 5 * ray, cam.C + 3 * ray]))
    lk = link_image(cloud, cam, np.array([0, 1]))
    p, r, c, d = lk.retained()
    assert p.tolist() == [1]
    assert (r[0], c[0]) == (10, 20)


def test_out_of_bounds_and_behind_dropped():
    cam = nadir()
    cloud = PointCloud(np.array([[0, 0, 0.0], [100, 0, 0.0], [0, 0, 20.0]]))
    lk = link_image(cloud, cam, np.arange(3))
    assert lk.points.tolist() == [0]
    assert lk.out_of_bounds == 1 and lk.behind_camera == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(1, 5)), min_size=1, max_size=30),
       st.randoms())
def test_min_depth_reduction_is_order_independent(cands, rnd):
    pts = np.arange(len(cands))
    rows = np.array([c[0] for c in cands])
    cols = np.array([c[1] for c in cands])
    depth = np.array([c[2] for c in cands])
    keep = min_depth_per_pixel(pts, rows, cols, depth)
    perm = list(range(len(cands)))
    rnd.shuffle(perm)
    perm = np.array(perm)
    keep2 = min_depth_per_pixel(pts[perm], rows[perm], cols[perm], depth[perm])
    assert set(pts[keep].tolist()) == set(pts[perm][keep2].tolist())
    for i in np.flatnonzero(keep):
        same = (rows == rows[i]) & (cols == cols[i])
        assert depth[i] == depth[same].min()


def test_explicit_links_on_synthetic_scene():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=2))
    a = pcma_run(sc.mesh, sc.cloud)
    a.apply_to(sc.cloud)
    _, clouds = imgma_run(sc.cameras, sc.mesh)
    vis = visible_points(a, clouds)
    links = pcimga_explicit(sc.cloud, sc.cameras, vis, clouds, threads=1)
    links4 = pcimga_explicit(sc.cloud, sc.cameras, vis, clouds, threads=4)
    for iid, lk in links.images.items():
        assert set(lk.points.tolist()) <= set(vis[iid].tolist())
        p, r, c, _ = lk.retained()
        assert len(np.unique(r * 10**6 + c)) == len(p)  # one point per pixel
        assert not np.any(sc.cloud.assoc_face[p] < 0)
        np.testing.assert_array_equal(lk.keep, links4.images[iid].keep)


def test_face_agreement_when_points_sit_inside_large_faces():
    # two big faces, points far from the shared edge: point face == pixel face
    v = np.array([[-10, -10, 0], [10, -10, 0], [10, 10, 0], [-10, 10, 0]], dtype=float)
    mesh = TiledMesh([MeshTile(0, v, [[0, 1, 2], [0, 2, 3]])])
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4, 4, (400, 3)) * [1, 1, 0]
    far = np.abs(pts[:, 0] - pts[:, 1]) > 0.5  # keep clear of the diagonal edge
    cloud = PointCloud(pts[far])
    a = pcma_run(mesh, cloud)
    a.apply_to(cloud)
    cam = nadir()
    _, clouds = imgma_run([cam], mesh)
    links = pcimga_explicit(cloud, [cam], visible_points(a, clouds), clouds)
    assert links.images[0].face_disagreements == 0
