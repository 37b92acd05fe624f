"""Text outputs: structured reports, link CSVs, visibility tables, PPM previews."""

from __future__ import annotations

import csv
import io as _io
import math

import numpy as np

from ..imgma import SparsePixelCloud, VisibilityTable
from ..pcimga import ImageLinks
from ..scene import LabelScheme
from ._atomic import write_text

UNLINKED_COLOR = (255, 0, 255)
UNLABELED_COLOR = (0, 0, 0)


def _value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_value(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def encode_report(sections: dict) -> str:
    """``{section: {key: value}}`` -> INI-like text with ``[section]`` headers.

    Nested dicts inside a section become dotted keys.
    """
    out = []

    def walk(prefix, d):
        for k, v in d.items():
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                walk(key + ".", v)
            else:
                out.append(f"{key} = {_value(v)}")

    for name, body in sections.items():
        if out:
            out.append("")
        out.append(f"[{name}]")
        walk("", body)
    return "\n".join(out) + "\n"


def write_report(path, sections: dict) -> None:
    write_text(path, encode_report(sections))


def encode_links_csv(links: ImageLinks) -> str:
    """Retained explicit links of one image, row-major."""
    pts, rows, cols, depth = links.retained()
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "row", "col", "depth"])
    for p, r, c, d in zip(pts, rows, cols, depth):
        w.writerow([int(p), int(r), int(c), repr(float(d))])
    return buf.getvalue()


def encode_implicit_links_csv(points: np.ndarray, point_tile: np.ndarray, point_face: np.ndarray,
                              spc: SparsePixelCloud) -> str:
    """Face-mediated links: every visible point with its face and the number
    of pixels that face covers in the image."""
    groups = spc.face_groups()
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "tile", "face", "pixels"])
    for p in points:
        key = (int(point_tile[p]), int(point_face[p]))
        w.writerow([int(p), key[0], key[1], len(groups.get(key, ()))])
    return buf.getvalue()


def encode_visibility(vis: VisibilityTable) -> str:
    lines = ["# image_id visible tile ids"]
    for iid, tiles in sorted(vis.image_tiles.items()):
        lines.append(" ".join([str(iid)] + [str(t) for t in tiles]))
    return "\n".join(lines) + "\n"


def decode_visibility(text: str) -> VisibilityTable:
    it = {}
    for raw in text.splitlines():
        tok = raw.split("#", 1)[0].split()
        if tok:
            it[int(tok[0])] = [int(t) for t in tok[1:]]
    return VisibilityTable.from_image_tiles(it)


def encode_label_table(spc: SparsePixelCloud, column: str) -> str:
    """Per-pixel label table of one image (only linked pixels)."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "col", "tile", "face", column])
    vals = spc.attributes[column]
    for i in range(len(spc)):
        v = vals[i]
        w.writerow([int(spc.rows[i]), int(spc.cols[i]), int(spc.tile_id[i]), int(spc.face_id[i]),
                    int(v) if np.issubdtype(np.asarray(vals).dtype, np.integer) else repr(float(v))])
    return buf.getvalue()


def render_label_ppm(spc: SparsePixelCloud, width: int, height: int, column: str, scheme: LabelScheme) -> str:
    """ASCII PPM of a pixel label column.

    Pixels without a face link are magenta; linked pixels whose label is
    unknown (negative or not in the scheme) are black.
    """
    img = np.empty((height, width, 3), dtype=np.int64)
    img[:] = UNLINKED_COLOR
    labels = np.asarray(spc.attributes[column], dtype=np.int64)
    lut = {k: v[1] for k, v in scheme.entries.items()}
    colors = np.array([lut.get(int(v), UNLABELED_COLOR) for v in labels], dtype=np.int64).reshape(-1, 3)
    img[spc.rows, spc.cols] = colors
    lines = ["P3", f"{width} {height}", "255"]
    lines += [" ".join(str(int(x)) for x in row.reshape(-1)) for row in img]
    return "\n".join(lines) + "\n"


__all__ = [
    "encode_report", "write_report", "encode_links_csv", "encode_implicit_links_csv",
    "encode_visibility", "decode_visibility", "encode_label_table", "render_label_ppm",
    "UNLINKED_COLOR", "UNLABELED_COLOR",
]
