"""Where points fall through the cracks.

Builds the gable-roof scene, places one constructed point in each kind of
gap between association prisms and reports which of them get linked under
the two boundary policies.  Then shifts a flat scene off its mesh and
compares the two threshold presets.
"""

import numpy as np

from meshlink import synthkit
from meshlink.pcma import H3D_SCHEDULE, PRESETS, BoundaryPolicy, PcmaConfig, level_histogram, pcma_run
from meshlink.scene import PointCloud

DESCRIPTION = {
    "A1": "beyond every threshold level",
    "anchor": "close to its face, pins the face to level 1",
    "A2": "inside level 2, dropped by early stopping",
    "B1": "above a convex ridge, outside both prisms",
    "B2": "above the ridge and beyond the largest threshold",
    "C1": "exactly on the ridge edge",
    "C2": "projects onto an interior edge",
}


def dead_zone_table():
    spec = synthkit.SceneSpec("roof", seed=0)
    sc = synthkit.generate(spec)
    dz = synthkit.dead_zone_points(spec, H3D_SCHEDULE)
    cloud = PointCloud(dz.positions)
    linked = {}
    for policy in BoundaryPolicy:
        a = pcma_run(sc.mesh, cloud, PcmaConfig(H3D_SCHEDULE, policy))
        linked[policy] = a.point_face >= 0
    print(f"{'case':8s} {'exclude':>8s} {'include':>8s}  meaning")
    for i, case in enumerate(dz.cases):
        ex = "linked" if linked[BoundaryPolicy.EXCLUDE][i] else "-"
        inc = "linked" if linked[BoundaryPolicy.INCLUDE][i] else "-"
        print(f"{case:8s} {ex:>8s} {inc:>8s}  {DESCRIPTION[case]}")


def misalignment():
    print("\nflat scene shifted 0.31 m along its normal")
    for shift in (0.0, 0.31):
        sc = synthkit.generate(synthkit.SceneSpec("plane", density=10, shift=(0, 0, shift), seed=1))
        for name, sched in sorted(PRESETS.items()):
            a = pcma_run(sc.mesh, sc.cloud, PcmaConfig(sched))
            hist = level_histogram(a, sched.n_levels)[1:]
            share = hist / max(hist.sum(), 1)
            print(f"  shift {shift:4.2f}  {name}: {a.associated.mean():6.1%} linked, "
                  f"level shares {np.round(share, 3).tolist()}")


if __name__ == "__main__":
    dead_zone_table()
    misalignment()
