"""Binary sparse pixel cloud (``SPXC``), little-endian throughout.

Header: magic ``SPXC``, u32 version, u32 image id, u32 record count, u16
attribute count; per attribute u16 name length, UTF-8 name, u8 type code
(1 = i32, 2 = f32, 3 = f64).  Records: u32 row, u32 col, f32 depth, u32 tile
id, u32 face id, then the attribute values; sorted row-major, one per pixel.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CountMismatch, InputError, MalformedHeader, UnsortedRecords
from ..imgma import SparsePixelCloud
from ._atomic import write_bytes

MAGIC = b"SPXC"
VERSION = 1
_TYPES = {1: "<i4", 2: "<f4", 3: "<f8"}
_HEAD = struct.Struct("<4sIIIH")


def _type_code(name: str, col: np.ndarray) -> int:
    k = col.dtype.kind
    if k in "iub":
        if col.size and (col.min() < -2**31 or col.max() >= 2**31):
            raise InputError(f"pixel attribute {name!r} does not fit in int32")
        return 1
    if k == "f":
        return 2 if col.dtype.itemsize == 4 else 3
    raise InputError(f"pixel attribute {name!r} has unsupported dtype {col.dtype}")


def _record_dtype(attrs: list[tuple[str, int]]) -> np.dtype:
    fields = [("row", "<u4"), ("col", "<u4"), ("depth", "<f4"), ("tile", "<u4"), ("face", "<u4")]
    fields += [(f"a{i}", _TYPES[code]) for i, (_, code) in enumerate(attrs)]
    return np.dtype(fields)


def encode_spxc(spc: SparsePixelCloud) -> bytes:
    if not spc.is_sorted_unique():
        raise UnsortedRecords(f"image {spc.image_id}: records not sorted row-major")
    for a in (spc.rows, spc.cols, spc.tile_id, spc.face_id):
        if a.size and (a.min() < 0 or a.max() >= 2**32):
            raise InputError("pixel indices and face references must fit in u32")
    attrs = [(name, _type_code(name, np.asarray(col))) for name, col in spc.attributes.items()]
    out = [_HEAD.pack(MAGIC, VERSION, spc.image_id, len(spc), len(attrs))]
    for name, code in attrs:
        b = name.encode("utf-8")
        out.append(struct.pack("<H", len(b)) + b + struct.pack("<B", code))
    rec = np.zeros(len(spc), dtype=_record_dtype(attrs))
    rec["row"], rec["col"], rec["depth"] = spc.rows, spc.cols, spc.depth
    rec["tile"], rec["face"] = spc.tile_id, spc.face_id
    for i, (name, _) in enumerate(attrs):
        rec[f"a{i}"] = spc.attributes[name]
    out.append(rec.tobytes())
    return b"".join(out)


def decode_spxc(buf: bytes) -> SparsePixelCloud:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not an SPXC file")
    if len(buf) < _HEAD.size:
        raise MalformedHeader("truncated SPXC header")
    _, version, image_id, count, n_attr = _HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise MalformedHeader(f"unsupported SPXC version {version}")
    off = _HEAD.size
    attrs = []
    try:
        for _ in range(n_attr):
            (ln,) = struct.unpack_from("<H", buf, off)
            name = buf[off + 2:off + 2 + ln].decode("utf-8")
            (code,) = struct.unpack_from("<B", buf, off + 2 + ln)
            if code not in _TYPES or len(name.encode("utf-8")) != ln:
                raise MalformedHeader(f"bad attribute descriptor for {name!r}")
            attrs.append((name, code))
            off += 3 + ln
    except (struct.error, UnicodeDecodeError):
        raise MalformedHeader("truncated attribute descriptors") from None
    dt = _record_dtype(attrs)
    if len(buf) - off != count * dt.itemsize:
        raise CountMismatch(f"expected {count} records, payload has {len(buf) - off} bytes")
    rec = np.frombuffer(buf, dtype=dt, count=count, offset=off)
    spc = SparsePixelCloud(
        image_id, rec["row"].astype(np.int64), rec["col"].astype(np.int64),
        rec["depth"].astype(np.float32), rec["tile"].astype(np.int64), rec["face"].astype(np.int64),
        {name: rec[f"a{i}"].astype(_TYPES[code][1:]) for i, (name, code) in enumerate(attrs)},
    )
    if not spc.is_sorted_unique():
        raise UnsortedRecords(f"image {image_id}: records not sorted row-major")
    return spc


def read_spxc(path) -> SparsePixelCloud:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_spxc(buf)


def write_spxc(path, spc: SparsePixelCloud) -> None:
    write_bytes(path, encode_spxc(spc))


__all__ = ["read_spxc", "write_spxc", "encode_spxc", "decode_spxc"]
