"""Link a synthetic town's point cloud, mesh and images, then paint the
point labels into the images.

Run with ``python demos/associate_town.py --out /tmp/town``; the PPM files
written there can be opened with any image viewer.
"""

import argparse
from pathlib import Path

import numpy as np

from meshlink import synthkit
from meshlink.imgma import imgma_run
from meshlink.io.reports import render_label_ppm
from meshlink.pcimga import pcimga_explicit, visible_points
from meshlink.pcma import level_histogram, pcma_run
from meshlink.transfer import Associations, Direction, Kind, Mode, SceneData, TransferSpec, run_transfer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="town_demo")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sc = synthkit.generate(synthkit.SceneSpec("town", sigma=0.03, seed=args.seed, image_size=(160, 120)))
    print(f"scene: {len(sc.mesh.tiles)} tiles, {sc.mesh.n_faces} faces, {len(sc.cloud)} points, "
          f"{len(sc.cameras)} cameras")

    # points -> faces; once a face links points at level 1, its noisier
    # points beyond that band are dropped (early stopping)
    assoc = pcma_run(sc.mesh, sc.cloud)
    assoc.apply_to(sc.cloud)
    hist = level_histogram(assoc, 3)
    print(f"points linked: {assoc.associated.mean():.1%}  per level: {hist[1:].tolist()}")
    agree = (assoc.point_face == sc.gt_face) & (assoc.point_tile == sc.gt_tile)
    print(f"linked to the generating face: {agree[assoc.associated].mean():.1%}")

    # pixels -> faces, then points <-> pixels through the faces
    vis, clouds = imgma_run(sc.cameras, sc.mesh)
    for iid, spc in clouds.items():
        print(f"image {iid}: {len(spc)} linked pixels, tiles {vis.image_tiles[iid]}")
    visible = visible_points(assoc, clouds)
    links = pcimga_explicit(sc.cloud, sc.cameras, visible, clouds)

    scene = SceneData(sc.cloud, sc.mesh, clouds)
    rep = run_transfer(TransferSpec(Direction.PC_TO_IMG, Kind.LABEL, (("label", "label"),), Mode.IMPLICIT),
                       scene, Associations(assoc, clouds, links))
    print(f"implicit transfer: {rep.transferred}/{rep.targets} pixels labeled, "
          f"faces unanimous {rep.unanimity_rate:.1%}")
    run_transfer(TransferSpec(Direction.PC_TO_IMG, Kind.LABEL, (("label", "sparse"),), Mode.EXPLICIT),
                 scene, Associations(assoc, clouds, links))

    for cam in sc.cameras:
        spc = clouds[cam.image_id]
        dense = np.mean(spc.attributes["label"] >= 0)
        sparse = np.mean(spc.attributes["sparse"] >= 0)
        print(f"image {cam.image_id}: implicit covers {dense:.1%} of linked pixels, explicit {sparse:.1%}")
        for col in ("label", "sparse"):
            path = out / f"image_{cam.image_id}_{col}.ppm"
            path.write_text(render_label_ppm(spc, cam.width, cam.height, col, sc.labels))
    print(f"previews written to {out}/")


if __name__ == "__main__":
    main()
