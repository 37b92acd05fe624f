import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshlink.errors import BehindCamera, DanglingIndex, InputError, ManifestMismatch, NonOrthonormalRotation, OutOfBounds
from meshlink.geom import Aabb
from meshlink.scene import (
    CameraModel,
    LabelScheme,
    MeshTile,
    PointCloud,
    TiledMesh,
    pixel_ray,
    project_point,
)

SQUARE_V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
SQUARE_F = np.array([[0, 1, 2], [0, 2, 3]])


def nadir(height=10.0, w=64, h=48, f=40.0):
    return CameraModel.look_at(0, [0.3, -0.2, height], [0.3, -0.2, 0.0], w, h, f, up=(0, 1, 0))


def random_camera(rng, image_id=0, distortion=False):
    C = rng.uniform(-20, 20, 3) + [0, 0, 30]
    target = rng.uniform(-10, 10, 3) * [1, 1, 0]
    w, h = int(rng.integers(32, 800)), int(rng.integers(32, 600))
    focal = float(rng.uniform(0.6, 3.0)) * max(w, h)
    cam = CameraModel.look_at(image_id, C, target, w, h, focal, up=rng.normal(size=3))
    if distortion:
        cam = dataclasses.replace(cam, k1=float(rng.uniform(-0.1, 0.1)), k2=float(rng.uniform(-0.02, 0.02)))
    return cam


def test_point_cloud_defaults_and_copy():
    pc = PointCloud(np.zeros((3, 3)), {"label": np.array([1, 2, 3])})
    assert len(pc) == 3
    assert np.all(pc.assoc_face == -1) and pc.assoc_face.dtype == np.int32
    assert not pc.is_associated.any()
    cp = pc.copy()
    cp.attributes["label"][0] = 9
    assert pc.attributes["label"][0] == 1
    with pytest.raises(InputError):
        PointCloud(np.zeros((3, 3)), {"label": np.zeros(2)})


def test_mesh_tile_validation_and_derived():
    t = MeshTile(0, SQUARE_V, SQUARE_F)
    d = t.derived()
    np.testing.assert_allclose(d.area, [0.5, 0.5])
    np.testing.assert_allclose(d.unit_normal, [[0, 0, 1], [0, 0, 1]])
    np.testing.assert_allclose(d.cog[0], [2 / 3, 1 / 3, 0])
    # t_max: distance from the centroid to its farthest vertex
    assert d.t_max[0] == pytest.approx(np.linalg.norm([2 / 3, 1 / 3]))
    np.testing.assert_array_equal(t.mbb.min, [0, 0, 0])
    with pytest.raises(DanglingIndex):
        MeshTile(0, SQUARE_V, [[0, 1, 4]])


def test_degenerate_face_flagged_with_warning(caplog):
    v = np.vstack([SQUARE_V, [[2, 2, 0]]])
    t = MeshTile(3, v, [[0, 1, 2], [0, 2, 4]])  # second face is collinear
    with caplog.at_level(logging.WARNING):
        d = t.derived()
    assert list(d.degenerate) == [False, True]
    assert "degenerate" in caplog.text


def test_tiled_mesh_manifest_checks():
    t = MeshTile(1, SQUARE_V, SQUARE_F)
    TiledMesh([t], {1: ("a.obj", Aabb([0, 0, 0], [1, 1, 1e-7]))})
    with pytest.raises(ManifestMismatch):
        TiledMesh([t], {1: ("a.obj", Aabb([0, 0, 0], [1, 1, 1e-5]))})
    with pytest.raises(InputError):
        TiledMesh([t, MeshTile(1, SQUARE_V, SQUARE_F)])


def test_camera_rejects_non_orthonormal_rotation():
    with pytest.raises(NonOrthonormalRotation):
        CameraModel(0, 10, 10, 5, 5, 5, 5, np.diag([1, 1, 1.01]), np.zeros(3))


def test_principal_ray_projects_to_principal_point():
    cam = nadir()
    (r, c), depth = project_point(cam, [0.3, -0.2, 0.0])
    assert (r, c) == (pytest.approx(24.0), pytest.approx(32.0))
    assert depth == pytest.approx(10.0)
    with pytest.raises(BehindCamera):
        project_point(cam, [0.3, -0.2, 20.0])


def test_pixel_ray_bounds_and_center_convention():
    cam = nadir()
    ray = pixel_ray(cam, 0, 0)
    (r, c), _ = project_point(cam, ray.at(10.0))
    assert (r, c) == (pytest.approx(0.5), pytest.approx(0.5))
    for rc in ((-1, 0), (0, 64), (48, 0)):
        with pytest.raises(OutOfBounds):
            pixel_ray(cam, *rc)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_projection_round_trip(seed, distortion):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng, distortion=distortion)
    rows = rng.integers(0, cam.height, 50)
    cols = rng.integers(0, cam.width, 50)
    d = cam.pixel_dirs(rows, cols)
    X = cam.C + rng.uniform(1, 100, (50, 1)) * d
    r, c, depth = cam.project_points(X)
    assert np.abs(r - rows - 0.5).max() < 1e-6
    assert np.abs(c - cols - 0.5).max() < 1e-6
    assert np.all(depth > 0)


def test_non_invertible_distortion_rejected():
    cam = nadir(f=10.0)
    with pytest.raises(InputError):
        dataclasses.replace(cam, k1=-0.5)


def test_label_scheme_default():
    s = LabelScheme.default()
    assert s.entries[1][0] == "roof"
    assert s.color(0) == (170, 170, 170)
    with pytest.raises(InputError):
        LabelScheme({-1: ("bad", (0, 0, 0))})
