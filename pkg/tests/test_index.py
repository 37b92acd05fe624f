import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from meshlink import synthkit
from meshlink.errors import EmptyCloud, NoValidFaces
from meshlink.geom import Ray
from meshlink.index import PointIndex, ball_query, build_face_bvh, bvh_raycast
from meshlink.scene import MeshTile, TiledMesh


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloud):
        PointIndex(np.empty((0, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_ball_query_matches_brute_force(seed, r):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, (400, 3))
    idx = PointIndex(pts)
    c = rng.uniform(-5, 5, 3)
    expected = np.flatnonzero(np.sqrt(((pts - c) ** 2).sum(axis=1)) <= r)
    np.testing.assert_array_equal(ball_query(idx, c, r), expected)


def test_ball_query_is_inclusive_on_the_sphere():
    pts = np.array([[3.0, 4.0, 0.0], [3.0, 4.0, 1e-6]])
    np.testing.assert_array_equal(PointIndex(pts).ball_query([0, 0, 0], 5.0), [0])


def test_pairs_within_matches_per_center_queries():
    rng = np.random.default_rng(1)
    idx = PointIndex(rng.uniform(0, 10, (500, 3)))
    centers = rng.uniform(0, 10, (30, 3))
    radii = rng.uniform(0.5, 2.0, 30)
    owner, pts = idx.pairs_within(centers, radii)
    for i in range(30):
        np.testing.assert_array_equal(pts[owner == i], idx.ball_query(centers[i], radii[i]))


def test_kd_tree_depth_is_logarithmic():
    idx = PointIndex(np.random.default_rng(0).uniform(0, 1, (10000, 3)))
    assert idx.depth <= 2 * int(np.ceil(np.log2(10000 / 32))) + 2


def test_bvh_matches_brute_force_on_town():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=4))
    rng = np.random.default_rng(0)
    for tile in sc.mesh.tiles:
        bvh = build_face_bvh(tile)
        origins = rng.uniform(-5, 25, (300, 3)) + [0, 0, 20]
        targets = rng.uniform(0, 20, (300, 3)) * [1, 1, 0.2]
        dirs = targets - origins
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        face, t = bvh.cast(origins, dirs)
        tri, _, fid = oracles.mesh_triangles(TiledMesh([tile]))
        for i in range(len(dirs)):
            ts = np.array([oracles._mt(origins[i], dirs[i], *tri[k]) for k in range(len(tri))])
            if np.all(np.isnan(ts)):
                assert face[i] == -1 and np.isinf(t[i])
                continue
            best = np.nanmin(ts)
            tied = fid[np.flatnonzero(np.abs(ts - best) <= 1e-12)]
            assert t[i] == pytest.approx(best, abs=1e-12)
            assert face[i] == tied.min()


def test_bvh_leaf_size_and_coverage():
    sc = synthkit.generate(synthkit.SceneSpec("plane", cells=16))
    tile = sc.mesh.tiles[0]
    bvh = build_face_bvh(tile, leaf_size=8)
    leaves = bvh.node_count > 0
    assert bvh.node_count[leaves].max() <= 8
    assert bvh.node_count.sum() == tile.n_faces
    assert sorted(bvh.order.tolist()) == list(range(tile.n_faces))


def test_bvh_raycast_single_ray_and_pruning():
    sc = synthkit.generate(synthkit.SceneSpec("plane", cells=16))
    bvh = build_face_bvh(sc.mesh.tiles[0])
    ray = Ray([1.0, 1.0, 5.0], [0.0, 0.0, -1.0])
    fid, t, p = bvh_raycast(bvh, ray)
    assert t == pytest.approx(5.0)
    np.testing.assert_allclose(p, [1, 1, 0])
    assert bvh_raycast(bvh, Ray([1.0, 1.0, 5.0], [0.0, 0.0, 1.0])) is None
    # a vertical ray enters only a small part of the hierarchy
    assert len(bvh.visited_nodes(ray)) < bvh.n_nodes / 4


def test_bvh_requires_valid_faces():
    t = MeshTile(0, np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2.0]]), [[0, 1, 2]])
    with pytest.raises(NoValidFaces):
        build_face_bvh(t)
