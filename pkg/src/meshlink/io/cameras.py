"""Camera list text format.

One camera per line, whitespace separated::

    image_id width height fx fy cx cy k1 k2 r11 r12 r13 r21 r22 r23 r31 r32 r33 Cx Cy Cz

``R`` (row-major) rotates world into camera coordinates.  ``#`` starts a
comment.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import BadFieldCount, InputError, UnparsableValue
from ..scene import CameraModel
from ._atomic import write_text

N_FIELDS = 21
HEADER = "# image_id width height fx fy cx cy k1 k2 r11 r12 r13 r21 r22 r23 r31 r32 r33 Cx Cy Cz"


def encode_cameras(cameras: list[CameraModel]) -> str:
    ids = [c.image_id for c in cameras]
    if len(set(ids)) != len(ids):
        raise InputError("camera image ids must be unique")
    lines = [HEADER]
    for c in sorted(cameras, key=lambda c: c.image_id):
        vals = [c.fx, c.fy, c.cx, c.cy, c.k1, c.k2, *c.R.reshape(-1), *c.C]
        lines.append(" ".join([str(c.image_id), str(c.width), str(c.height)] + [repr(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


def decode_cameras(text: str, name: str = "cameras") -> list[CameraModel]:
    cams = []
    for no, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if len(tok) != N_FIELDS:
            raise BadFieldCount(f"{name}:{no}: {len(tok)} fields, expected {N_FIELDS}")
        try:
            iid, w, h = (int(t) for t in tok[:3])
            v = [float(t) for t in tok[3:]]
        except ValueError:
            raise UnparsableValue(f"{name}:{no}: {raw.strip()!r}") from None
        fx, fy, cx, cy, k1, k2 = v[:6]
        cams.append(CameraModel(iid, w, h, fx, fy, cx, cy, np.array(v[6:15]).reshape(3, 3),
                                np.array(v[15:18]), k1, k2))
    ids = [c.image_id for c in cams]
    if len(set(ids)) != len(ids):
        raise InputError(f"{name}: duplicate image id")
    return cams


def read_cameras(path) -> list[CameraModel]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_cameras(text, str(path))


def write_cameras(path, cameras: list[CameraModel]) -> None:
    write_text(path, encode_cameras(cameras))


def reprojection_error(cam: CameraModel, points, pixels) -> np.ndarray:
    """Pixel distance between projected control points and their observed
    ``(row, col)``.  A transposed rotation passes the orthonormality check
    but shows up here."""
    row, col, _ = cam.project_points(points)
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    return np.hypot(row - px[:, 0], col - px[:, 1])


__all__ = ["read_cameras", "write_cameras", "encode_cameras", "decode_cameras", "reprojection_error", "N_FIELDS"]
