"""PLY point clouds (ASCII and binary little-endian).

Layout written: ``x y z`` as double, then the attribute columns in their
insertion order with their own scalar type, then ``assoc_tile assoc_face``
as int.  Properties the library does not know about are read into
``attributes`` unchanged, so a read/write cycle is lossless.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import CountMismatch, InputError, MalformedHeader
from ..scene import PointCloud
from ._atomic import write_bytes

_PLY_TO_NP = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NP_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}
_ASSOC = ("assoc_tile", "assoc_face")


def _column_code(name: str, col: np.ndarray) -> str:
    kind, size = col.dtype.kind, col.dtype.itemsize
    if kind == "b":
        return "u1"
    if kind in "iu":
        code = f"{kind}{size}"
        if code in _NP_TO_PLY:
            return code
        info = np.iinfo(np.int32)
        if col.size and (col.min() < info.min or col.max() > info.max):
            raise InputError(f"column {name!r} does not fit in int32")
        return "i4"
    if kind == "f":
        return "f4" if size == 4 else "f8"
    raise InputError(f"column {name!r} has unsupported dtype {col.dtype}")


def _layout(cloud: PointCloud) -> list[tuple[str, str, np.ndarray]]:
    cols = [(c, "f8", cloud.positions[:, i]) for i, c in enumerate("xyz")]
    for name, col in cloud.attributes.items():
        if name in ("x", "y", "z") + _ASSOC:
            raise InputError(f"attribute name {name!r} is reserved")
        col = np.asarray(col)
        cols.append((name, _column_code(name, col), col))
    cols.append(("assoc_tile", "i4", cloud.assoc_tile))
    cols.append(("assoc_face", "i4", cloud.assoc_face))
    return cols


def _fmt(code: str):
    if code[0] == "f":
        return lambda v: repr(float(v))
    return lambda v: str(int(v))


def encode_point_cloud(cloud: PointCloud, binary: bool = True) -> bytes:
    cols = _layout(cloud)
    n = len(cloud)
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {n}"]
    head += [f"property {_NP_TO_PLY[code]} {name}" for name, code, _ in cols]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if binary:
        rec = np.empty(n, dtype=np.dtype([(name, "<" + code) for name, code, _ in cols]))
        for name, code, col in cols:
            rec[name] = col.astype("<" + code)
        return header + rec.tobytes()
    fmts = [_fmt(code) for _, code, _ in cols]
    lines = [" ".join(f(c[i]) for f, (_, _, c) in zip(fmts, cols)) for i in range(n)]
    return header + "".join(line + "\n" for line in lines).encode("ascii")


def write_point_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    write_bytes(path, encode_point_cloud(cloud, binary))


def _parse_header(buf: bytes):
    end = buf.find(b"end_header")
    if not buf.startswith(b"ply") or end < 0:
        raise MalformedHeader("not a PLY file or header not terminated")
    nl = buf.find(b"\n", end)
    body_start = len(buf) if nl < 0 else nl + 1
    lines = buf[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[list] = []  # [name, count, [(prop, code)]]
    for raw in lines[1:]:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise MalformedHeader(f"bad format line {raw!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise MalformedHeader(f"bad element line {raw!r}")
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property before element")
            if tok[1] == "list":
                if elements[-1][0] == "vertex":
                    raise MalformedHeader("list properties on vertices are not supported")
                elements[-1][2].append((tok[-1], None))
                continue
            if len(tok) != 3 or tok[1] not in _PLY_TO_NP:
                raise MalformedHeader(f"bad property line {raw!r}")
            elements[-1][2].append((tok[2], _PLY_TO_NP[tok[1]]))
        else:
            raise MalformedHeader(f"unexpected header line {raw!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    if not elements or elements[0][0] != "vertex":
        raise MalformedHeader("first element must be 'vertex'")
    props = elements[0][2]
    names = [p for p, _ in props]
    if len(set(names)) != len(names):
        raise MalformedHeader("duplicate property names")
    for c in "xyz":
        if c not in names:
            raise MalformedHeader(f"missing property {c!r}")
    return fmt, elements[0][1], props, len(elements) > 1, body_start


def decode_point_cloud(buf: bytes) -> PointCloud:
    fmt, n, props, more, start = _parse_header(buf)
    body = buf[start:]
    if fmt == "ascii":
        text = body.decode("ascii", errors="replace")
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if len(rows) < n or (not more and len(rows) != n):
            raise CountMismatch(f"expected {n} vertex rows, found {len(rows)}")
        rows = rows[:n]
        if any(len(r) != len(props) for r in rows):
            raise CountMismatch("vertex row with the wrong number of values")
        table = np.array(rows, dtype=str).reshape(n, len(props))
        try:
            data = {name: table[:, i].astype(code) for i, (name, code) in enumerate(props)}
        except ValueError as exc:
            raise CountMismatch(f"unparsable vertex value: {exc}") from None
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        dt = np.dtype([(name, order + code) for name, code in props])
        need = n * dt.itemsize
        if len(body) < need or (not more and len(body) != need):
            raise CountMismatch(f"expected {need} bytes of vertex data, found {len(body)}")
        rec = np.frombuffer(body[:need], dtype=dt)
        data = {name: rec[name].astype(code) for name, code in props}
    pos = np.column_stack([data.pop(c).astype(np.float64) for c in "xyz"]).reshape(n, 3)
    at = data.pop("assoc_tile", None)
    af = data.pop("assoc_face", None)
    attrs = {k: np.ascontiguousarray(v) for k, v in data.items()}
    return PointCloud(pos, attrs, at, af)


def read_point_cloud(path) -> PointCloud:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_point_cloud(buf)


__all__ = ["read_point_cloud", "write_point_cloud", "encode_point_cloud", "decode_point_cloud"]
