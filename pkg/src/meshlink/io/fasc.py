"""Binary face association table (``FASC``), little-endian throughout.

Header: magic ``FASC``, u32 version, u32 point count, u32 tile count.  Per
tile (ascending id): u32 tile id, u32 face count; per face: u8 level (255 =
none), u32 point count, that many u32 point indices (ascending).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CountMismatch, IndexOutOfRange, InputError, MalformedHeader
from ..pcma import LEVEL_NONE, FaceAssociation, TileAssociation
from ..scene import NOT_ASSOCIATED
from ._atomic import write_bytes

MAGIC = b"FASC"
VERSION = 1
NO_LEVEL = 255
_HEAD = struct.Struct("<4sIII")


def encode_fasc(assoc: FaceAssociation) -> bytes:
    out = [_HEAD.pack(MAGIC, VERSION, assoc.n_points, len(assoc.tiles))]
    for tid in sorted(assoc.tiles):
        ta = assoc.tiles[tid]
        if not 0 <= tid < 2**32:
            raise InputError(f"tile id {tid} does not fit in u32")
        if np.any(ta.level > 254):
            raise InputError("threshold level does not fit in u8")
        out.append(struct.pack("<II", tid, ta.n_faces))
        counts = ta.counts()
        if ta.indices.size and (ta.indices.min() < 0 or ta.indices.max() >= assoc.n_points):
            raise IndexOutOfRange(f"tile {tid}: point index out of range")
        for f in range(ta.n_faces):
            lv = int(ta.level[f])
            out.append(struct.pack("<BI", NO_LEVEL if lv == LEVEL_NONE else lv, int(counts[f])))
            out.append(np.sort(ta.points(f)).astype("<u4").tobytes())
    return b"".join(out)


def decode_fasc(buf: bytes) -> FaceAssociation:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a FASC file")
    try:
        _, version, n_points, n_tiles = _HEAD.unpack_from(buf, 0)
        if version != VERSION:
            raise MalformedHeader(f"unsupported FASC version {version}")
        off = _HEAD.size
        tiles = {}
        point_tile = np.full(n_points, NOT_ASSOCIATED, dtype=np.int64)
        point_face = np.full(n_points, NOT_ASSOCIATED, dtype=np.int64)
        for _ in range(n_tiles):
            tid, n_faces = struct.unpack_from("<II", buf, off)
            off += 8
            if tid in tiles:
                raise MalformedHeader(f"tile {tid} listed twice")
            level = np.zeros(n_faces, dtype=np.int16)
            indptr = np.zeros(n_faces + 1, dtype=np.int64)
            chunks = []
            for f in range(n_faces):
                lv, cnt = struct.unpack_from("<BI", buf, off)
                off += 5
                if off + 4 * cnt > len(buf):
                    raise CountMismatch("truncated point list")
                pts = np.frombuffer(buf, dtype="<u4", count=cnt, offset=off).astype(np.int64)
                off += 4 * cnt
                if cnt and pts.max() >= n_points:
                    raise IndexOutOfRange(f"tile {tid} face {f}: point index {pts.max()} >= {n_points}")
                if np.any(point_face[pts] >= 0) or len(np.unique(pts)) != cnt:
                    raise MalformedHeader(f"tile {tid} face {f}: point claimed twice")
                point_tile[pts] = tid
                point_face[pts] = f
                level[f] = LEVEL_NONE if lv == NO_LEVEL else lv
                indptr[f + 1] = indptr[f] + cnt
                chunks.append(pts)
            idx = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
            tiles[tid] = TileAssociation(indptr, idx, level)
    except struct.error:
        raise CountMismatch("truncated FASC file") from None
    if off != len(buf):
        raise CountMismatch(f"{len(buf) - off} trailing bytes")
    return FaceAssociation(n_points, tiles, point_tile, point_face)


def read_face_assoc(path) -> FaceAssociation:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_fasc(buf)


def write_face_assoc(path, assoc: FaceAssociation) -> None:
    write_bytes(path, encode_fasc(assoc))


__all__ = ["read_face_assoc", "write_face_assoc", "encode_fasc", "decode_fasc"]
