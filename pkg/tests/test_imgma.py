import logging
from collections import Counter

import numpy as np
import pytest

import oracles
from meshlink import synthkit
from meshlink.errors import InvalidFloor
from meshlink.geom import Aabb
from meshlink.imgma import (
    ImgmaConfig,
    SparsePixelCloud,
    VisibilityTable,
    build_camera_pyramid,
    face_pixel_map,
    fuse_depth,
    imgma_run,
    mbb_visible,
    select_visible_tiles,
)
from meshlink.scene import CameraModel, MeshTile, TiledMesh


def nadir(x=0.0, y=0.0, height=10.0, w=64, h=48, focal=None):
    focal = focal if focal is not None else w / 2.0  # 90 degree horizontal field of view
    return CameraModel.look_at(0, [x, y, height], [x, y, 0.0], w, h, focal, up=(0, 1, 0))


def test_pyramid_geometry_nadir():
    cam = nadir(w=48, h=48, focal=24.0)
    pyr = build_camera_pyramid(cam, 0.0)
    base = pyr.poly.vertices[np.isclose(pyr.poly.vertices[:, 2], 0.0)]
    assert len(base) == 4
    np.testing.assert_allclose(np.sort(np.abs(base[:, :2]).ravel()), np.full(8, 10.0), atol=1e-9)
    assert pyr.contains([0, 0, 5]) and pyr.contains([9.9, 9.9, 0.0])
    assert not pyr.contains([11, 0, 0.0])
    with pytest.raises(InvalidFloor):
        build_camera_pyramid(cam, 10.0)


def test_mbb_stages():
    cam = nadir(w=48, h=48, focal=24.0)
    pyr = build_camera_pyramid(cam, 0.0, far=100.0)
    # stage 1: a corner inside
    assert mbb_visible(pyr, Aabb([-1, -1, 0], [1, 1, 1])) == (True, 1)
    # stage 2: the box swallows the whole footprint, no corner inside
    assert mbb_visible(pyr, Aabb([-50, -50, 0], [50, 50, 1])) == (True, 2)
    # stage 2 as well: projection center inside the box
    assert mbb_visible(pyr, Aabb([-50, -50, 0], [50, 50, 20]))[0]
    # stage 3: a thin bar across the footprint, ends outside, misses the corner rays
    assert mbb_visible(pyr, Aabb([-30, -0.5, 0], [30, 0.5, 0.5])) == (True, 3)
    # invisible: off to the side
    assert mbb_visible(pyr, Aabb([30, 30, 0], [31, 31, 1])) == (False, None)


def test_select_visible_tiles_counts_stages():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=1))
    stats = Counter()
    far_cam = CameraModel.look_at(0, [200, 200, 30], [300, 300, 0], 64, 48, 40)
    assert select_visible_tiles(far_cam, sc.mesh, stats=stats) == []
    assert stats[None] == 4


def test_cube_bottom_faces_are_never_seen_from_above():
    sc = synthkit.generate(synthkit.SceneSpec("cube"))
    _, clouds = imgma_run(sc.cameras, sc.mesh)
    spc = clouds[0]
    labels = {int(sc.face_labels[t][f]) for t, f in zip(spc.tile_id, spc.face_id)}
    assert synthkit.GROUND not in labels  # bottom faces are labeled ground
    assert labels == {synthkit.ROOF}


def _same(spc, ref):
    r, c, z, t, f = ref
    np.testing.assert_array_equal(spc.rows, r)
    np.testing.assert_array_equal(spc.cols, c)
    np.testing.assert_array_equal(spc.tile_id, t)
    np.testing.assert_array_equal(spc.face_id, f)
    np.testing.assert_allclose(spc.depth, z, rtol=1e-9, atol=0)


@pytest.mark.parametrize("template", ["cube", "roof", "town"])
def test_matches_exhaustive_raycast(template):
    sc = synthkit.generate(synthkit.SceneSpec(template, seed=6))
    _, clouds = imgma_run(sc.cameras, sc.mesh)
    for cam in sc.cameras:
        _same(clouds[cam.image_id], oracles.brute_raycast(cam, sc.mesh))


def test_threads_do_not_change_output():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=2))
    _, a = imgma_run(sc.cameras, sc.mesh, threads=1)
    _, b = imgma_run(sc.cameras, sc.mesh, threads=4)
    _, c = imgma_run(sc.cameras[:1], sc.mesh, threads=4)
    for iid in a:
        for k in ("rows", "cols", "depth", "tile_id", "face_id"):
            np.testing.assert_array_equal(getattr(a[iid], k), getattr(b[iid], k))
    for k in ("rows", "cols", "depth", "tile_id", "face_id"):
        np.testing.assert_array_equal(getattr(a[0], k), getattr(c[0], k))


def test_no_visible_tile_gives_empty_cloud_and_warning(caplog):
    sc = synthkit.generate(synthkit.SceneSpec("plane"))
    cam = CameraModel.look_at(5, [500, 500, 30], [600, 600, 0], 64, 48, 40)
    with caplog.at_level(logging.WARNING):
        vis, clouds = imgma_run([cam], sc.mesh)
    assert len(clouds[5]) == 0
    assert vis.image_tiles[5] == []
    assert "sees no tile" in caplog.text


def test_fuse_depth_rules():
    r = (np.array([0, 0, 1]), np.array([0, 1, 0]), np.array([5.0, 3.0, 2.0]), np.array([4, 4, 4]))
    s = (np.array([0, 1]), np.array([0, 0]), np.array([5.0 + 1e-12, 1.0]), np.array([9, 2]))
    a = fuse_depth(1, [(2, r), (1, s)], width=4)
    b = fuse_depth(1, [(1, s), (2, r)], width=4)
    for k in ("rows", "cols", "depth", "tile_id", "face_id"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    assert a.is_sorted_unique()
    # pixel (0,0): depth tie within 1e-9 -> lowest (tile, face) = (1, 9)
    assert (a.tile_id[0], a.face_id[0]) == (1, 9)
    # pixel (1,0): nearer hit wins
    assert (a.tile_id[2], a.face_id[2], a.depth[2]) == (1, 2, 1.0)
    assert len(fuse_depth(3, [], width=4)) == 0


def test_sparse_pixel_cloud_lookup_and_groups():
    spc = SparsePixelCloud(0, [0, 0, 2], [1, 3, 0], [1.0, 2.0, 3.0], [0, 1, 0], [5, 5, 5])
    np.testing.assert_array_equal(spc.lookup([0, 2, 1], [3, 0, 1]), [1, 2, -1])
    g = spc.face_groups()
    assert sorted(g) == [(0, 5), (1, 5)]
    np.testing.assert_array_equal(g[(0, 5)], [0, 2])
    assert face_pixel_map({0: spc})[(1, 5)][0][0] == 0


def test_visibility_table_consistent():
    vt = VisibilityTable.from_image_tiles({2: [3, 1], 1: [1]})
    assert vt.tile_images == {1: [1, 2], 3: [2]}
    assert vt.is_consistent()


def test_degenerate_faces_never_linked():
    v = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0], [5, 5, 0], [2, 2, 0]], dtype=float)
    # face 1 is a zero-area sliver on the same plane
    tile = MeshTile(0, v, [[0, 1, 2], [0, 3, 4]])
    mesh = TiledMesh([tile])
    _, clouds = imgma_run([nadir(2, 2)], mesh, ImgmaConfig())
    assert set(clouds[0].face_id.tolist()) == {0}
