"""Acceptance criteria, one test per criterion at the stated tolerance.

Every test records a PASS/FAIL line that pytest prints in its summary.
"""

import os
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import record
from meshlink import synthkit
from meshlink.cli import main
from meshlink.imgma import imgma_run, select_visible_tiles
from meshlink.io.cameras import decode_cameras, encode_cameras
from meshlink.io.config import decode_config, encode_config
from meshlink.io.fasc import decode_fasc, encode_fasc
from meshlink.io.mesh import read_mesh_tiles, write_mesh_tiles
from meshlink.io.ply import decode_point_cloud, encode_point_cloud
from meshlink.io.spxc import decode_spxc, encode_spxc
from meshlink.metrics import forward_backward_check, weighted_average_precision
from meshlink.pcimga import link_image
from meshlink.pcma import (H3D_SCHEDULE, V3D_SCHEDULE, BoundaryPolicy, FaceAssociation, PcmaConfig,
                           ThresholdSchedule, adaptive_threshold_filter, association_radius,
                           first_passing_level, level_histogram, pcma_run)
from meshlink.scene import CameraModel, MeshTile, PointCloud, TiledMesh, pixel_ray


def _check(criterion, ok, detail):
    record(criterion, bool(ok), detail)
    assert ok, detail


# 1 ------------------------------------------------------------------------------

PCMA_SCENES = [
    (synthkit.SceneSpec("plane", sigma=0.03, seed=10), H3D_SCHEDULE, BoundaryPolicy.EXCLUDE),
    (synthkit.SceneSpec("cube", sigma=0.02, shift=(0.01, -0.02, 0.04), seed=11), H3D_SCHEDULE,
     BoundaryPolicy.INCLUDE),
    (synthkit.SceneSpec("roof", sigma=0.06, seed=12), ThresholdSchedule(((0.03, 0.05), (0.06, 0.08), (0.12, 0.2))),
     BoundaryPolicy.EXCLUDE),
    (synthkit.SceneSpec("town", sigma=0.05, seed=13), H3D_SCHEDULE, BoundaryPolicy.EXCLUDE),
    (synthkit.SceneSpec("town", sigma=0.3, shift=(0.1, 0.0, 0.2), seed=14), V3D_SCHEDULE, BoundaryPolicy.INCLUDE),
    (synthkit.SceneSpec("roof", cells=10, density=10, sigma=0.1, seed=15), ThresholdSchedule(((0.0, 0.1), (0.2, 0.3))),
     BoundaryPolicy.INCLUDE),
]


def test_criterion_1_pcma_oracle_equivalence():
    t0 = time.perf_counter()
    mismatches = []
    for spec, sched, policy in PCMA_SCENES:
        sc = synthkit.generate(spec)
        assert sc.mesh.n_faces <= 500 and len(sc.cloud) <= 5000
        a = pcma_run(sc.mesh, sc.cloud, PcmaConfig(sched, policy))
        pt, pf, levels = oracles.brute_pcma(sc.mesh, sc.cloud.positions, sched, policy is BoundaryPolicy.INCLUDE)
        same = np.array_equal(a.point_tile, pt) and np.array_equal(a.point_face, pf)
        for (t, f), lv in levels.items():
            same &= int(a.tiles[t].level[f]) == lv
        if not same:
            mismatches.append(spec.template.value)
    elapsed = time.perf_counter() - t0
    _check("1", not mismatches and elapsed < 30,
           f"{len(PCMA_SCENES)} scenes, mismatches {mismatches}, {elapsed:.1f}s incl. oracle")


# 2 ------------------------------------------------------------------------------

def test_criterion_2_imgma_oracle_equivalence():
    t0 = time.perf_counter()
    bad = []
    n_img = 0
    for template, seed in (("cube", 21), ("roof", 22), ("town", 23)):
        sc = synthkit.generate(synthkit.SceneSpec(template, seed=seed, image_size=(64, 48)))
        assert len(sc.mesh.tiles) >= 2
        _, clouds = imgma_run(sc.cameras, sc.mesh)
        for cam in sc.cameras:
            assert (cam.width, cam.height) == (64, 48)
            n_img += 1
            r, c, z, t, f = oracles.brute_raycast(cam, sc.mesh)
            spc = clouds[cam.image_id]
            ok = (np.array_equal(spc.rows, r) and np.array_equal(spc.cols, c)
                  and np.array_equal(spc.tile_id, t) and np.array_equal(spc.face_id, f)
                  and np.all(np.abs(spc.depth - z) <= 1e-9 * np.abs(z)))
            if not ok:
                bad.append((template, cam.image_id))
    elapsed = time.perf_counter() - t0
    _check("2", not bad and elapsed < 30, f"{n_img} images on 3 scenes, mismatches {bad}, {elapsed:.1f}s")


# 3 ------------------------------------------------------------------------------

def random_rig(seed, n=20, scene_extent=20.0):
    rng = np.random.default_rng(seed)
    cams = []
    while len(cams) < n:
        C = rng.uniform([-10, -10, 2], [scene_extent + 10, scene_extent + 10, 40])
        target = np.append(rng.uniform(0, scene_extent, 2), 0.0)
        up = rng.normal(size=3)
        focal = float(np.exp(rng.uniform(np.log(20), np.log(800))))
        cams.append(CameraModel.look_at(len(cams), C, target, 64, 48, focal, up=up))
    return cams


def test_criterion_3_preselection_soundness():
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=1))
    stats = Counter()
    false_neg = 0
    for cam in random_rig(3):
        selected = set(select_visible_tiles(cam, sc.mesh, stats=stats))
        false_neg += len(oracles.tiles_hit(cam, sc.mesh) - selected)
    stages = {("rejected" if k is None else f"stage {k}"): v for k, v in stats.items()}
    all_stages = all(stats[k] > 0 for k in (1, 2, 3))
    _check("3", false_neg == 0 and all_stages, f"false negatives {false_neg}, decisions {dict(sorted(stages.items()))}")


# 4 ------------------------------------------------------------------------------

def test_criterion_4_radius_formula():
    triples = [(3, 4, 5), (5, 12, 13), (8, 15, 17), (7, 24, 25), (20, 21, 29), (9, 40, 41)]
    exact = all(association_radius(a * s, b * s) == c * s for a, b, c in triples for s in (1, 2, 10))
    exact &= all(association_radius(t, 0.0) == t for t in (0.0, 0.5, 3.0, 1e6))
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 100, 10_000)
    th = rng.uniform(0, 5, 10_000)
    r = association_radius(t, th)
    covers = bool(np.all(r >= np.maximum(t, th)))
    _check("4", exact and covers, f"triples exact {exact}, r >= max(t, theta) on 10^4 pairs {covers}")


# 5 ------------------------------------------------------------------------------

def test_criterion_5_adaptive_thresholding():
    sched = H3D_SCHEDULE
    # early stopping: a level-1 point hides the level-2 one
    kept, level = adaptive_threshold_filter([0.02, 0.08, -0.3], sched)
    early = kept.tolist() == [0] and level == 1
    kept, level = adaptive_threshold_filter([0.08, -0.12, 0.5], sched)
    early &= kept.tolist() == [0] and level == 2
    kept, level = adaptive_threshold_filter([0.5], sched)
    early &= len(kept) == 0 and level is None
    # monotonicity: a point passing level l passes every later level
    d = np.random.default_rng(5).uniform(-0.3, 0.3, 5000)
    lv = first_passing_level(d, sched)
    mono = True
    for k in range(sched.n_levels):
        inside = (d >= -sched.minus()[k]) & (d <= sched.plus()[k])
        mono &= bool(np.all(inside[(lv > 0) & (lv <= k + 1)]))
    # case table on the roof template, both boundary policies
    spec = synthkit.SceneSpec("roof", seed=0)
    sc = synthkit.generate(spec)
    dz = synthkit.dead_zone_points(spec, sched)
    cloud = PointCloud(dz.positions)
    outcome = {}
    for policy, want in ((BoundaryPolicy.EXCLUDE, dz.expect_exclude), (BoundaryPolicy.INCLUDE, dz.expect_include)):
        a = pcma_run(sc.mesh, cloud, PcmaConfig(sched, policy))
        outcome[policy] = np.array_equal(a.point_face >= 0, want)
    toggles = [c for c, e, i in zip(dz.cases, dz.expect_exclude, dz.expect_include) if e != i]
    cases_ok = all(outcome.values()) and set(toggles) == {"C1", "C2"}
    _check("5", early and mono and cases_ok,
           f"early stopping {early}, monotone {mono}, cases {dz.cases} match {cases_ok}, policy toggles {toggles}")


# 6 ------------------------------------------------------------------------------

def test_criterion_6_forward_backward():
    homogeneous = []
    for template in ("plane", "cube", "roof", "town"):
        sc = synthkit.generate(synthkit.SceneSpec(template, seed=6))
        rep = forward_backward_check(sc.cloud, pcma_run(sc.mesh, sc.cloud))
        homogeneous.append(rep.consistency_rate)
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
    mesh = TiledMesh([MeshTile(0, v, [[0, 1, 2]])])
    cloud = PointCloud(np.zeros((3, 3)), {"label": np.array([1, 1, 2], dtype=np.int32)})
    mixed = forward_backward_check(cloud, FaceAssociation.from_backlinks(mesh, [0, 0, 0], [0, 0, 0]))
    wap = weighted_average_precision([[8, 2], [0, 10]])
    ok = all(r == 1.0 for r in homogeneous) and mixed.consistency_rate == 2 / 3 and abs(wap - 0.9167) <= 1e-4 \
        and abs(wap - 11 / 12) <= 1e-12
    _check("6", ok, f"homogeneous {homogeneous}, mixed face {mixed.consistency_rate:.6f}, WAP {wap:.12f}")


# 7 ------------------------------------------------------------------------------

def _random_camera(rng, image_id):
    w, h = int(rng.integers(32, 2000)), int(rng.integers(32, 2000))
    C = rng.uniform(-100, 100, 3)
    target = C + rng.normal(size=3) * 10
    focal = float(rng.uniform(0.6, 3.0) * max(w, h))
    return CameraModel.look_at(image_id, C, target, w, h, focal, up=rng.normal(size=3))


def test_criterion_7_collinearity():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(10):
        cam = _random_camera(rng, i)
        rows = rng.integers(0, cam.height, 1000)
        cols = rng.integers(0, cam.width, 1000)
        depth = rng.uniform(0.5, 500, 1000)
        pts = np.array([pixel_ray(cam, r, c).at(s) for r, c, s in zip(rows, cols, depth)])
        pr, pc, _ = cam.project_points(pts)
        worst = max(worst, float(np.max(np.hypot(pr - (rows + 0.5), pc - (cols + 0.5)))))
    nearer = 0
    for k in range(1000):
        cam = _random_camera(rng, k)
        r, c = int(rng.integers(0, cam.height)), int(rng.integers(0, cam.width))
        ray = pixel_ray(cam, r, c)
        d1, d2 = sorted(rng.uniform(0.5, 200, 2))
        if d2 - d1 < 1e-3:
            d2 = d1 + 1.0
        order = rng.permutation(2)
        pts = np.array([ray.at(d1), ray.at(d2)])[order]
        lk = link_image(PointCloud(pts), cam, np.array([0, 1]))
        p, rr, cc, _ = lk.retained()
        near_idx = int(np.flatnonzero(order == 0)[0])
        nearer += int(p.tolist() == [near_idx] and (rr[0], cc[0]) == (r, c))
    _check("7", worst < 1e-6 and nearer == 1000,
           f"max round trip error {worst:.2e} px over 10x10^3 pixels, nearer point kept {nearer}/1000")


# 8 ------------------------------------------------------------------------------

def test_criterion_8_misalignment():
    # the shift runs along the plane normal, the only direction that moves points off a flat surface
    spec = synthkit.SceneSpec("plane", density=10, shift=(0.0, 0.0, 0.31), seed=8)
    sc = synthkit.generate(spec)
    v3 = pcma_run(sc.mesh, sc.cloud, PcmaConfig(V3D_SCHEDULE))
    h3 = pcma_run(sc.mesh, sc.cloud, PcmaConfig(H3D_SCHEDULE))
    rate_v = float((v3.point_face >= 0).mean())
    rate_h = float((h3.point_face >= 0).mean())
    hist = level_histogram(v3, V3D_SCHEDULE.n_levels)
    upper = hist[2:].sum() / max(hist[1:].sum(), 1)
    _check("8", rate_v >= 0.95 and upper > 0.5 and rate_h < 0.05,
           f"V3D {rate_v:.1%} with {upper:.1%} at level >= 2, H3D {rate_h:.1%}")


# 9 ------------------------------------------------------------------------------

def _tree(d: Path):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _all_commands(root: Path, threads: int):
    s = root / "scene"
    steps = [
        ["synth", "--template", "town", "--seed", "9", "--out", s],
        ["pcma", "--mesh", s / "mesh", "--cloud", s / "cloud.ply", "--out-cloud", root / "a.ply",
         "--out-assoc", root / "a.fasc"],
        ["imgma", "--mesh", s / "mesh", "--cameras", s / "cameras.txt", "--out", root / "px"],
        ["pcimga", "--mode", "implicit", "--mesh", s / "mesh", "--cloud", root / "a.ply", "--pixels", root / "px",
         "--out", root / "implicit"],
        ["pcimga", "--mode", "explicit", "--mesh", s / "mesh", "--cloud", root / "a.ply", "--pixels", root / "px",
         "--cameras", s / "cameras.txt", "--out", root / "explicit"],
        ["transfer", "--direction", "pc-to-img", "--kind", "label", "--mode", "explicit", "--attr", "label:seg",
         "--mesh", s / "mesh", "--cloud", root / "a.ply", "--pixels", root / "px", "--cameras", s / "cameras.txt",
         "--out-pixels", root / "seg", "--preview", root / "preview", "--report", root / "t1.txt"],
        ["transfer", "--direction", "img-to-pc", "--kind", "label", "--mode", "implicit", "--attr", "seg:back",
         "--mesh", s / "mesh", "--cloud", root / "a.ply", "--pixels", root / "seg", "--out-cloud", root / "b.ply",
         "--report", root / "t2.txt"],
        ["transfer", "--direction", "pc-to-mesh", "--kind", "feature", "--attr", "intensity",
         "--mesh", s / "mesh", "--cloud", root / "a.ply", "--out-mesh", root / "m"],
        ["check", "--cloud", root / "a.ply", "--mesh", s / "mesh", "--out", root / "check.txt"],
    ]
    for argv in steps:
        code = main([str(a) for a in argv] + ["--threads", str(threads)])
        assert code == 0, argv[0]


def test_criterion_9_determinism(tmp_path):
    trees = []
    for run in range(3):
        for threads in (1, 4):
            d = tmp_path / f"r{run}_t{threads}"
            _all_commands(d, threads)
            trees.append(_tree(d))
    identical = all(t == trees[0] for t in trees[1:])
    _check("9", identical, f"{len(trees[0])} output files x 6 runs (1 and 4 threads, 3 times each)")


# 10 -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def perf_scenes():
    big = synthkit.generate(synthkit.SceneSpec("plane", cells=224, density=2500, sigma=0.02, seed=0, cameras=[]))
    town = synthkit.generate(synthkit.SceneSpec("town", cells=330, density=0.001, seed=0, cameras=[]))
    cam = CameraModel.look_at(0, [10, 10, 30], [10, 10, 0], 1000, 1000, 1000.0, up=(0, 1, 0))
    return big, town, cam


@pytest.mark.slow
def test_criterion_10_performance(perf_scenes):
    big, town, cam = perf_scenes
    assert big.mesh.n_faces >= 100_000 and len(big.cloud) >= 1_000_000
    assert town.mesh.n_faces >= 190_000
    t0 = time.perf_counter()
    pcma_run(big.mesh, big.cloud, threads=1)
    t_pcma = time.perf_counter() - t0
    t0 = time.perf_counter()
    imgma_run([cam], town.mesh, threads=1)
    t_img = time.perf_counter() - t0
    _check("10", t_pcma < 120 and t_img < 60,
           f"PCMA {len(big.cloud)} points x {big.mesh.n_faces} faces {t_pcma:.1f}s; "
           f"ImgMA 1 Mpx x {town.mesh.n_faces} faces {t_img:.1f}s")


@pytest.mark.slow
def test_criterion_10_speedup(perf_scenes):
    n_cpu = os.cpu_count() or 1
    if n_cpu < 4:
        record("10 speedup", False, f"not measurable: {n_cpu} CPU(s) available, 4 needed", status="FAIL")
        pytest.xfail(f"4-thread speedup needs 4 CPUs, host has {n_cpu}")
    big, town, cam = perf_scenes
    speed = {}
    for name, fn in (("pcma", lambda th: pcma_run(big.mesh, big.cloud, threads=th)),
                     ("imgma", lambda th: imgma_run([cam], town.mesh, threads=th))):
        times = {}
        for th in (1, 4):
            t0 = time.perf_counter()
            fn(th)
            times[th] = time.perf_counter() - t0
        speed[name] = times[1] / times[4]
    _check("10 speedup", min(speed.values()) >= 1.5, f"speedups {speed}")


# 11 -----------------------------------------------------------------------------

def test_criterion_11_io(tmp_path):
    results = {}
    sc = synthkit.generate(synthkit.SceneSpec("town", seed=11, sigma=0.02))
    a = pcma_run(sc.mesh, sc.cloud)
    a.apply_to(sc.cloud)
    for binary in (True, False):
        buf = encode_point_cloud(sc.cloud, binary)
        results[f"ply_{'bin' if binary else 'ascii'}"] = encode_point_cloud(decode_point_cloud(buf), binary) == buf
    buf = encode_fasc(a)
    results["fasc"] = encode_fasc(decode_fasc(buf)) == buf
    _, clouds = imgma_run(sc.cameras, sc.mesh)
    results["spxc"] = all(encode_spxc(decode_spxc(encode_spxc(s))) == encode_spxc(s) for s in clouds.values())
    text = encode_cameras(sc.cameras)
    results["cameras"] = encode_cameras(decode_cameras(text)) == text
    cfg = decode_config("pcma.levels = 0.3:0.3,0.6:0.6,1.2:1.2\nthreads = 3\n")
    results["config"] = encode_config(decode_config(encode_config(cfg))) == encode_config(cfg)
    write_mesh_tiles(tmp_path / "m1", sc.mesh)
    write_mesh_tiles(tmp_path / "m2", read_mesh_tiles(tmp_path / "m1"))
    results["mesh"] = _tree(tmp_path / "m1") == _tree(tmp_path / "m2")

    # malformed inputs: exit code 2 and nothing written
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "quad.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    (bad / "manifest.txt").write_text("version 1\ntile 0 quad.obj 0 0 0 1 1 0\n")
    (bad / "short.ply").write_bytes(encode_point_cloud(sc.cloud)[:-5])
    (bad / "cams.txt").write_text("1 64 48 50 50 32 24 0 0 1 0 0 0 1 0 0 0 1 0 0\n")
    (bad / "cfg.txt").write_text("pcma.levels = abc\n")
    good = tmp_path / "good"
    write_mesh_tiles(good / "mesh", sc.mesh)
    (good / "cloud.ply").write_bytes(encode_point_cloud(sc.cloud))
    (good / "cams.txt").write_text(text)
    out = tmp_path / "out"
    cases = {
        "quad face": ["pcma", "--mesh", bad / "manifest.txt", "--cloud", good / "cloud.ply",
                      "--out-cloud", out / "a.ply", "--out-assoc", out / "a.fasc"],
        "truncated ply": ["pcma", "--mesh", good / "mesh", "--cloud", bad / "short.ply",
                          "--out-cloud", out / "a.ply", "--out-assoc", out / "a.fasc"],
        "camera fields": ["imgma", "--mesh", good / "mesh", "--cameras", bad / "cams.txt", "--out", out / "px"],
        "bad config": ["pcma", "--mesh", good / "mesh", "--cloud", good / "cloud.ply", "--config", bad / "cfg.txt",
                       "--out-cloud", out / "a.ply", "--out-assoc", out / "a.fasc"],
        "missing file": ["check", "--cloud", bad / "none.ply", "--mesh", good / "mesh", "--out", out / "c.txt"],
    }
    for name, argv in cases.items():
        code = main([str(x) for x in argv])
        results[f"exit2 {name}"] = code == 2 and not out.exists()
    failed = [k for k, v in results.items() if not v]
    _check("11", not failed, f"{len(results)} checks, failed {failed}")
