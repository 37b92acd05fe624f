"""Command-line entry point.

Subcommands: ``pcma``, ``imgma``, ``pcimga``, ``transfer``, ``check`` and
``synth``.  Exit status is 0 on success, 2 for bad input and 3 when an
internal invariant breaks.  Every command prints a run log to standard
error (and writes it as JSON with ``--log``); the log is the only output
that carries timings, so data files are identical for any thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from contextlib import contextmanager
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from . import imgma, metrics, pcimga, pcma, synthkit, transfer
from .errors import InputError, InvariantViolation, MeshlinkError
from .io import cameras as io_cameras
from .io import config as io_config
from .io import fasc as io_fasc
from .io import labels as io_labels
from .io import mesh as io_mesh
from .io import ply as io_ply
from .io import reports as io_reports
from .io import spxc as io_spxc
from .io._atomic import write_bytes
from .scene import LabelScheme, PointCloud

logger = logging.getLogger("meshlink")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
_SPXC_NAME = re.compile(r"image_(\d+)\.spxc$")


@dataclass
class RunLog:
    command: str
    config: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages.append({"stage": name, "seconds": round(time.perf_counter() - t0, 6)})

    def lines(self) -> list[str]:
        out = [f"[{self.command}]"]
        out += [f"  {k} = {v}" for k, v in self.config.items()]
        out += [f"  stage {s['stage']}: {s['seconds']:.3f} s" for s in self.stages]
        out += [f"  {k}: {v}" for k, v in self.counts.items()]
        out += [f"  warning: {w}" for w in self.warnings]
        return out

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=str)


class _WarningCollector(logging.Handler):
    def __init__(self, log: RunLog):
        super().__init__(logging.WARNING)
        self.log = log

    def emit(self, record):
        self.log.warnings.append(record.getMessage())


class Outputs:
    """Collects output files and writes them only after the command succeeded."""

    def __init__(self):
        self.files: dict[Path, bytes] = {}

    def add(self, path, data):
        self.files[Path(path)] = data if isinstance(data, bytes) else data.encode("utf-8")

    def commit(self):
        for p, data in self.files.items():
            write_bytes(p, data)


# -- shared helpers -------------------------------------------------------------

def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("FUSION_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"FUSION_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _config(args) -> io_config.RunConfig:
    path = getattr(args, "config", None)
    if path is not None and not Path(path).exists():
        raise InputError(f"config file {path} does not exist")
    cfg = io_config.read_config(path)
    preset = getattr(args, "preset", None)
    if preset:
        cfg = replace(cfg, pcma=replace(cfg.pcma, schedule=pcma.PRESETS[preset]))
    return cfg


def _echo(cfg: io_config.RunConfig, threads: int) -> dict:
    return {
        "pcma.levels": cfg.pcma.schedule.encode(),
        "pcma.boundary_policy": cfg.pcma.boundary_policy.value,
        "pcma.edge_tolerance": cfg.pcma.edge_tolerance,
        "imgma.depth_tie_tol": cfg.imgma.depth_tie_tol,
        "threads": threads,
        "seed": cfg.seed,
    }


def _read_pixels(directory) -> dict[int, imgma.SparsePixelCloud]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"pixel directory {d} does not exist")
    out = {}
    for p in sorted(d.iterdir()):
        m = _SPXC_NAME.search(p.name)
        if m:
            spc = io_spxc.read_spxc(p)
            if spc.image_id != int(m.group(1)):
                raise InputError(f"{p.name} holds image {spc.image_id}")
            out[spc.image_id] = spc
    return out


def _spxc_name(iid: int) -> str:
    return f"image_{iid}.spxc"


def _assoc_from(args, mesh, cloud) -> pcma.FaceAssociation:
    if getattr(args, "assoc", None):
        a = io_fasc.read_face_assoc(args.assoc)
        if a.n_points != len(cloud):
            raise InputError("association table and cloud differ in point count")
        return a
    return pcma.FaceAssociation.from_backlinks(mesh, cloud.assoc_tile, cloud.assoc_face)


# -- commands -------------------------------------------------------------------

def cmd_pcma(args, log: RunLog, out: Outputs):
    threads = _threads(args)
    cfg = _config(args)
    log.config.update(_echo(cfg, threads))
    with log.stage("read"):
        mesh = io_mesh.read_mesh_tiles(args.mesh)
        cloud = io_ply.read_point_cloud(args.cloud)
    with log.stage("associate"):
        assoc = pcma.pcma_run(mesh, cloud, cfg.pcma, threads)
    assoc.apply_to(cloud)
    rates = metrics.association_rates(mesh, cloud, assoc)
    hist = pcma.level_histogram(assoc, cfg.pcma.schedule.n_levels)
    log.counts.update({
        "faces": mesh.n_faces, "points": len(cloud),
        "points_associated": int(assoc.associated.sum()),
        "point_rate": round(rates.point_rate, 6), "face_rate": round(rates.face_rate, 6),
        "area_rate": round(rates.area_rate, 6),
        "points_per_level": hist[1:].tolist(),
    })
    out.add(args.out_cloud, io_ply.encode_point_cloud(cloud, binary=not args.ascii))
    out.add(args.out_assoc, io_fasc.encode_fasc(assoc))


def cmd_imgma(args, log: RunLog, out: Outputs):
    threads = _threads(args)
    cfg = _config(args)
    log.config.update(_echo(cfg, threads))
    with log.stage("read"):
        mesh = io_mesh.read_mesh_tiles(args.mesh)
        cams = io_cameras.read_cameras(args.cameras)
    stats = Counter()
    with log.stage("associate"):
        vis, clouds = imgma.imgma_run(cams, mesh, cfg.imgma, threads, stats)
    if len(clouds) != len(cams):
        raise InvariantViolation("an image failed during association")
    d = Path(args.out)
    for iid, spc in clouds.items():
        out.add(d / _spxc_name(iid), io_spxc.encode_spxc(spc))
    out.add(d / "visibility.txt", io_reports.encode_visibility(vis))
    log.counts.update({
        "images": len(cams), "tiles": len(mesh.tiles),
        "linked_pixels": {iid: len(s) for iid, s in clouds.items()},
        "preselection_stages": {("rejected" if k is None else f"stage_{k}"): v
                                for k, v in sorted(stats.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))},
    })


def cmd_pcimga(args, log: RunLog, out: Outputs):
    threads = _threads(args)
    log.config.update({"mode": args.mode, "threads": threads})
    with log.stage("read"):
        mesh = io_mesh.read_mesh_tiles(args.mesh)
        cloud = io_ply.read_point_cloud(args.cloud)
        pixels = _read_pixels(args.pixels)
        assoc = _assoc_from(args, mesh, cloud)
    vis = pcimga.visible_points(assoc, pixels)
    d = Path(args.out)
    with log.stage("link"):
        if args.mode == "implicit":
            for iid in sorted(vis):
                out.add(d / f"links_{iid}.csv", io_reports.encode_implicit_links_csv(
                    vis[iid], assoc.point_tile, assoc.point_face, pixels[iid]))
            log.counts["visible_points"] = {iid: len(v) for iid, v in vis.items()}
        else:
            if not args.cameras:
                raise InputError("explicit mode needs --cameras")
            cams = io_cameras.read_cameras(args.cameras)
            known = {c.image_id for c in cams}
            missing = sorted(set(vis) - known)
            if missing:
                raise InputError(f"no camera for image(s) {missing}")
            links = pcimga.pcimga_explicit(cloud, cams, vis, pixels, threads)
            summary = {}
            for iid, lk in links.images.items():
                out.add(d / f"links_{iid}.csv", io_reports.encode_links_csv(lk))
                summary[str(iid)] = {
                    "visible": len(vis[iid]), "projected": len(lk.points), "retained": int(lk.keep.sum()),
                    "behind_camera": lk.behind_camera, "out_of_bounds": lk.out_of_bounds,
                    "face_disagreements": lk.face_disagreements,
                }
            out.add(d / "pcimga_report.txt", io_reports.encode_report(summary))
            log.counts["images"] = summary


def _parse_attr(spec: str) -> tuple[str, str]:
    src, _, dst = spec.partition(":")
    if not src:
        raise InputError(f"bad --attr {spec!r}")
    return src, dst or src


def cmd_transfer(args, log: RunLog, out: Outputs):
    threads = _threads(args)
    direction = transfer.Direction(args.direction)
    kind = transfer.Kind(args.kind)
    needs_mode = direction in (transfer.Direction.PC_TO_IMG, transfer.Direction.IMG_TO_PC)
    mode = transfer.Mode(args.mode) if needs_mode else None
    if needs_mode and args.mode is None:
        raise InputError("point/image transfers need --mode")
    spec = transfer.TransferSpec(direction, kind, tuple(_parse_attr(a) for a in args.attr), mode,
                                 transfer.PixelRule(args.pixel_rule))
    log.config.update({"direction": direction.value, "kind": kind.value,
                       "mode": mode.value if mode else None, "threads": threads})
    ends = direction.value.split("-to-")
    uses = set(ends)
    if mode is transfer.Mode.IMPLICIT:
        uses.add("mesh")
    with log.stage("read"):
        mesh = io_mesh.read_mesh_tiles(args.mesh) if args.mesh else None
        cloud = io_ply.read_point_cloud(args.cloud) if args.cloud else None
        pixels = _read_pixels(args.pixels) if args.pixels else {}
        for need, have in (("mesh", mesh), ("pc", cloud)):
            if need in uses and have is None:
                raise InputError(f"--{'mesh' if need == 'mesh' else 'cloud'} is required for {direction.value}")
        if "img" in uses and not args.pixels:
            raise InputError(f"--pixels is required for {direction.value}")
        assoc = transfer.Associations(pixels=pixels or None)
        if cloud is not None and mesh is not None:
            assoc.faces = _assoc_from(args, mesh, cloud)
        if mode is transfer.Mode.EXPLICIT:
            if not args.cameras:
                raise InputError("explicit mode needs --cameras")
            cams = io_cameras.read_cameras(args.cameras)
            vis = pcimga.visible_points(assoc.faces, pixels)
            assoc.links = pcimga.pcimga_explicit(cloud, [c for c in cams if c.image_id in vis], vis, pixels, threads)
    scene = transfer.SceneData(cloud, mesh, pixels)
    with log.stage("transfer"):
        report = transfer.run_transfer(spec, scene, assoc)
    log.counts.update(report.as_dict())
    target = ends[1]
    if target == "pc":
        if not args.out_cloud:
            raise InputError("--out-cloud is required for a point cloud target")
        out.add(args.out_cloud, io_ply.encode_point_cloud(cloud, binary=not args.ascii))
    elif target == "mesh":
        if not args.out_mesh:
            raise InputError("--out-mesh is required for a mesh target")
        d = Path(args.out_mesh)
        for t in sorted(mesh.tiles, key=lambda t: t.tile_id):
            out.add(d / f"tile_{t.tile_id}.obj", io_mesh.encode_obj(t))
            out.add(d / f"tile_{t.tile_id}.faces", io_mesh.encode_sidecar(t))
        entries = [io_mesh.ManifestEntry(t.tile_id, f"tile_{t.tile_id}.obj", t.mbb) for t in mesh.tiles]
        out.add(d / io_mesh.MANIFEST_NAME, io_mesh.encode_manifest(io_mesh.FileManifest(entries=entries)))
    else:
        if not args.out_pixels:
            raise InputError("--out-pixels is required for an image target")
        d = Path(args.out_pixels)
        dst = spec.columns[0][1]
        for iid, spc in sorted(pixels.items()):
            out.add(d / _spxc_name(iid), io_spxc.encode_spxc(spc))
            if kind is transfer.Kind.LABEL:
                out.add(d / f"labels_{iid}.csv", io_reports.encode_label_table(spc, dst))
        if args.preview:
            if kind is not transfer.Kind.LABEL:
                raise InputError("--preview needs a label transfer")
            if not args.cameras:
                raise InputError("--preview needs --cameras for the image size")
            scheme = io_labels.read_label_scheme(args.labels) if args.labels else LabelScheme.default()
            cams = {c.image_id: c for c in io_cameras.read_cameras(args.cameras)}
            for iid, spc in sorted(pixels.items()):
                c = cams[iid]
                out.add(Path(args.preview) / f"labels_{iid}.ppm",
                        io_reports.render_label_ppm(spc, c.width, c.height, dst, scheme))
    if args.report:
        out.add(args.report, io_reports.encode_report({"transfer": report.as_dict()}))


def cmd_check(args, log: RunLog, out: Outputs):
    threads = _threads(args)
    cfg = _config(args)
    log.config.update(_echo(cfg, threads))
    with log.stage("read"):
        mesh = io_mesh.read_mesh_tiles(args.mesh)
        cloud = io_ply.read_point_cloud(args.cloud)
    with log.stage("associate"):
        assoc = io_fasc.read_face_assoc(args.assoc) if args.assoc else pcma.pcma_run(mesh, cloud, cfg.pcma, threads)
    with log.stage("check"):
        rep = metrics.forward_backward_check(cloud, assoc, args.label)
        rates = metrics.association_rates(mesh, cloud, assoc, args.label)
    body = {
        "consistency": {
            "points_checked": rep.points_checked,
            "points_consistent": rep.points_consistent,
            "consistency_rate": rep.consistency_rate,
            "associated_faces": rep.associated_faces,
            "mixed_faces": rep.mixed_faces,
            "mixed_face_fraction": rep.mixed_face_fraction,
            "weighted_average_precision": rep.weighted_average_precision,
            "weighting": rep.weighting,
            "classes": rep.classes.tolist(),
        },
        "confusion": {f"gt_{c}": rep.confusion[i].tolist() for i, c in enumerate(rep.classes)},
        "association_rates": {
            "face_rate": rates.face_rate, "area_rate": rates.area_rate, "point_rate": rates.point_rate,
            "unassociated_by_class": {str(k): v for k, v in rates.unassociated_by_class.items()},
        },
        "inconsistent_points": {"count": len(rep.inconsistent_points),
                                "indices": rep.inconsistent_points.tolist()},
    }
    text = io_reports.encode_report(body)
    log.counts.update({"consistency_rate": rep.consistency_rate, "inconsistent": len(rep.inconsistent_points)})
    if args.out:
        out.add(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_synth(args, log: RunLog, out: Outputs):
    spec = synthkit.SceneSpec(args.template, extent=args.extent, density=args.density, cells=args.cells,
                              sigma=args.sigma, shift=tuple(args.shift), seed=args.seed)
    log.config.update({"template": spec.template.value, "seed": spec.seed, "extent": spec.extent,
                       "density": spec.density, "cells": spec.cells, "sigma": spec.sigma, "shift": spec.shift})
    with log.stage("generate"):
        sc = synthkit.generate(spec)
    d = Path(args.out)
    out.add(d / "cloud.ply", io_ply.encode_point_cloud(sc.cloud))
    for t in sorted(sc.mesh.tiles, key=lambda t: t.tile_id):
        out.add(d / "mesh" / f"tile_{t.tile_id}.obj", io_mesh.encode_obj(t))
        out.add(d / "mesh" / f"tile_{t.tile_id}.faces", io_mesh.encode_sidecar(t))
    entries = [io_mesh.ManifestEntry(t.tile_id, f"tile_{t.tile_id}.obj", t.mbb) for t in sc.mesh.tiles]
    out.add(d / "mesh" / io_mesh.MANIFEST_NAME, io_mesh.encode_manifest(io_mesh.FileManifest(entries=entries)))
    out.add(d / "cameras.txt", io_cameras.encode_cameras(sc.cameras))
    out.add(d / "labels.txt", io_labels.encode_label_scheme(sc.labels))
    gt = pcma.FaceAssociation.from_backlinks(sc.mesh, sc.gt_tile, sc.gt_face)
    out.add(d / "ground_truth.fasc", io_fasc.encode_fasc(gt))
    log.counts.update({"tiles": len(sc.mesh.tiles), "faces": sc.mesh.n_faces, "points": len(sc.cloud),
                       "cameras": len(sc.cameras)})
    if spec.template is synthkit.Template.ROOF:
        dz = synthkit.dead_zone_points(spec)
        lines = ["case,x,y,z,linked_exclude,linked_include"]
        for c, p, e, i in zip(dz.cases, dz.positions, dz.expect_exclude, dz.expect_include):
            lines.append(",".join([c, *(repr(float(v)) for v in p), str(int(e)), str(int(i))]))
        out.add(d / "dead_zones.csv", "\n".join(lines) + "\n")
        out.add(d / "dead_zones.ply", io_ply.encode_point_cloud(PointCloud(dz.positions)))


# -- argument parsing -----------------------------------------------------------

def _common(p: argparse.ArgumentParser, config=True):
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $FUSION_THREADS or the CPU count)")
    p.add_argument("--log", help="write the run log as JSON to this file")
    if config:
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--preset", choices=sorted(pcma.PRESETS), help="threshold schedule preset")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meshlink", description="Associate and transfer data between "
                                 "point clouds, tiled meshes and oriented images.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pcma", help="associate points with mesh faces")
    p.add_argument("--mesh", required=True, help="tile manifest")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out-cloud", required=True)
    p.add_argument("--out-assoc", required=True)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    _common(p)

    p = sub.add_parser("imgma", help="associate image pixels with mesh faces")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("pcimga", help="link points and pixels")
    p.add_argument("--mode", choices=["implicit", "explicit"], required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--cloud", required=True, help="cloud with association columns")
    p.add_argument("--assoc", help="FASC table (default: the cloud's backlinks)")
    p.add_argument("--pixels", required=True, help="directory of SPXC files")
    p.add_argument("--cameras")
    p.add_argument("--out", required=True)
    _common(p, config=False)

    p = sub.add_parser("transfer", help="transfer labels or features")
    p.add_argument("--direction", required=True, choices=[d.value for d in transfer.Direction])
    p.add_argument("--kind", required=True, choices=[k.value for k in transfer.Kind])
    p.add_argument("--mode", choices=[m.value for m in transfer.Mode])
    p.add_argument("--pixel-rule", default="min-depth", choices=[r.value for r in transfer.PixelRule])
    p.add_argument("--attr", action="append", required=True, help="src[:dst], repeatable")
    p.add_argument("--mesh")
    p.add_argument("--cloud")
    p.add_argument("--assoc")
    p.add_argument("--pixels")
    p.add_argument("--cameras")
    p.add_argument("--labels", help="label scheme for previews")
    p.add_argument("--out-cloud")
    p.add_argument("--out-mesh")
    p.add_argument("--out-pixels")
    p.add_argument("--preview", help="directory for PPM label previews")
    p.add_argument("--report")
    p.add_argument("--ascii", action="store_true")
    _common(p, config=False)

    p = sub.add_parser("check", help="forward-backward consistency check")
    p.add_argument("--cloud", required=True, help="cloud with ground-truth labels")
    p.add_argument("--mesh", required=True)
    p.add_argument("--assoc", help="use this association instead of running pcma")
    p.add_argument("--label", default="label")
    p.add_argument("--out")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic scene")
    p.add_argument("--template", required=True, choices=[t.value for t in synthkit.Template])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--extent", type=float, default=20.0)
    p.add_argument("--density", type=float, default=4.0)
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--shift", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    _common(p, config=False)
    return ap


COMMANDS: dict[str, Callable] = {
    "pcma": cmd_pcma, "imgma": cmd_imgma, "pcimga": cmd_pcimga,
    "transfer": cmd_transfer, "check": cmd_check, "synth": cmd_synth,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log = RunLog(args.command)
    collector = _WarningCollector(log)
    root = logging.getLogger("meshlink")
    root.addHandler(collector)
    out = Outputs()
    code = EXIT_OK
    try:
        COMMANDS[args.command](args, log, out)
        out.commit()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.warnings.append(f"input error: {exc}")
        code = EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    except (InvariantViolation, MeshlinkError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    except Exception as exc:  # anything unexpected is an internal failure
        logger.debug("unexpected failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    finally:
        root.removeHandler(collector)
    log.counts["exit_code"] = code
    print("\n".join(log.lines()), file=sys.stderr)
    if args.log:
        try:
            write_bytes(args.log, log.to_json().encode("utf-8"))
        except OSError as exc:
            print(f"error: cannot write run log: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
