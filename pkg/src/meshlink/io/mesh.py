"""Tiled meshes: one OBJ per tile, a text manifest and per-face sidecars.

Manifest::

    version 1
    tile <id> <relative obj path> <minx> <miny> <minz> <maxx> <maxy> <maxz>

The sidecar ``<tile>.faces`` next to each OBJ holds per-face columns::

    face label:i4 height:f8
    0 2 1.5
    ...

Texture coordinates, normals, groups and materials in OBJ files are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (CountMismatch, DanglingIndex, InputError, MalformedHeader,
                      NonTriangleFace, UnparsableValue)
from ..geom import Aabb
from ..scene import MeshTile, TiledMesh
from ._atomic import write_text

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.txt"
_CODES = {"i4": np.int32, "i8": np.int64, "f4": np.float32, "f8": np.float64}


@dataclass
class ManifestEntry:
    tile_id: int
    path: str
    box: Aabb


@dataclass
class FileManifest:
    version: int = MANIFEST_VERSION
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.tile_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InputError("manifest lists a tile id twice")


def _num(v) -> str:
    return repr(float(v))


def encode_manifest(man: FileManifest) -> str:
    lines = [f"version {man.version}"]
    for e in sorted(man.entries, key=lambda e: e.tile_id):
        if any(c.isspace() for c in e.path):
            raise InputError(f"tile path {e.path!r} contains whitespace")
        box = " ".join(_num(v) for v in (*e.box.min, *e.box.max))
        lines.append(f"tile {e.tile_id} {e.path} {box}")
    return "\n".join(lines) + "\n"


def decode_manifest(text: str) -> FileManifest:
    version = None
    entries = []
    for no, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        try:
            if tok[0] == "version" and len(tok) == 2:
                version = int(tok[1])
            elif tok[0] == "tile" and len(tok) == 9:
                v = [float(x) for x in tok[3:]]
                entries.append(ManifestEntry(int(tok[1]), tok[2], Aabb(v[:3], v[3:])))
            else:
                raise MalformedHeader(f"manifest line {no}: {raw!r}")
        except ValueError:
            raise MalformedHeader(f"manifest line {no}: {raw!r}") from None
    if version != MANIFEST_VERSION:
        raise MalformedHeader(f"unsupported or missing manifest version {version}")
    return FileManifest(version, entries)


def encode_obj(tile: MeshTile) -> str:
    out = [f"# tile {tile.tile_id}"]
    out += [f"v {_num(x)} {_num(y)} {_num(z)}" for x, y, z in tile.vertices]
    out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tile.faces]
    return "\n".join(out) + "\n"


def decode_obj(text: str, name: str = "obj") -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for no, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise MalformedHeader(f"{name}:{no}: vertex needs 3 coordinates")
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise UnparsableValue(f"{name}:{no}: {raw!r}") from None
        elif tok[0] == "f":
            if len(tok) != 4:
                raise NonTriangleFace(f"{name}:{no}: face with {len(tok) - 1} vertices")
            try:
                idx = [int(t.split("/")[0]) for t in tok[1:]]
            except ValueError:
                raise UnparsableValue(f"{name}:{no}: {raw!r}") from None
            # negative indices count back from the latest vertex
            if 0 in idx:
                raise DanglingIndex(f"{name}:{no}: vertex index 0")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise DanglingIndex(f"{name}: face references a missing vertex")
    return v, f


def encode_sidecar(tile: MeshTile) -> str:
    cols = []
    for name, col in tile.face_attrs.items():
        col = np.asarray(col)
        if col.dtype.kind in "iub":
            code = "i4" if col.dtype.itemsize <= 4 or col.dtype.kind == "b" else "i8"
            fmt = lambda v: str(int(v))  # noqa: E731
        elif col.dtype.kind == "f":
            code = "f4" if col.dtype.itemsize == 4 else "f8"
            fmt = _num
        else:
            raise InputError(f"face column {name!r} has unsupported dtype {col.dtype}")
        if ":" in name or any(c.isspace() for c in name):
            raise InputError(f"face column name {name!r} is not allowed")
        cols.append((f"{name}:{code}", fmt, col))
    lines = [" ".join(["face"] + [h for h, _, _ in cols])]
    for i in range(tile.n_faces):
        lines.append(" ".join([str(i)] + [f(c[i]) for _, f, c in cols]))
    return "\n".join(lines) + "\n"


def decode_sidecar(text: str, n_faces: int, name: str = "sidecar") -> dict[str, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split()[0] != "face":
        raise MalformedHeader(f"{name}: header must start with 'face'")
    heads = []
    for h in lines[0].split()[1:]:
        col, _, code = h.partition(":")
        if code not in _CODES:
            raise MalformedHeader(f"{name}: bad column descriptor {h!r}")
        heads.append((col, _CODES[code]))
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != n_faces:
        raise CountMismatch(f"{name}: {len(rows)} rows for {n_faces} faces")
    out = {}
    for j, (col, dt) in enumerate(heads):
        vals = []
        for i, r in enumerate(rows):
            if len(r) != len(heads) + 1 or int(r[0]) != i:
                raise CountMismatch(f"{name}: row {i} malformed")
            vals.append(r[j + 1])
        try:
            out[col] = np.array(vals, dtype=str).astype(dt) if vals else np.empty(0, dt)
        except ValueError:
            raise UnparsableValue(f"{name}: column {col!r}") from None
    return out


def write_mesh_tiles(directory, mesh: TiledMesh) -> Path:
    """Write every tile plus the manifest; returns the manifest path.

    All files are encoded before the first one is written.
    """
    directory = Path(directory)
    files: dict[str, str] = {}
    entries = []
    for t in sorted(mesh.tiles, key=lambda t: t.tile_id):
        rel = f"tile_{t.tile_id}.obj"
        files[rel] = encode_obj(t)
        if t.face_attrs:
            files[f"tile_{t.tile_id}.faces"] = encode_sidecar(t)
        entries.append(ManifestEntry(t.tile_id, rel, t.mbb))
    files[MANIFEST_NAME] = encode_manifest(FileManifest(MANIFEST_VERSION, entries))
    for rel, text in files.items():
        write_text(directory / rel, text)
    return directory / MANIFEST_NAME


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def read_mesh_tiles(manifest_path) -> TiledMesh:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    man = decode_manifest(_read(manifest_path))
    base = manifest_path.parent
    tiles = []
    for e in man.entries:
        p = base / e.path
        if not p.is_file():
            raise InputError(f"tile {e.tile_id}: {p} does not exist")
        v, f = decode_obj(_read(p), str(p))
        side = p.with_suffix(".faces")
        attrs = decode_sidecar(_read(side), len(f), str(side)) if side.is_file() else {}
        tiles.append(MeshTile(e.tile_id, v, f, attrs))
    return TiledMesh(tiles, {e.tile_id: (e.path, e.box) for e in man.entries})


__all__ = [
    "FileManifest", "ManifestEntry", "read_mesh_tiles", "write_mesh_tiles",
    "encode_obj", "decode_obj", "encode_manifest", "decode_manifest",
    "encode_sidecar", "decode_sidecar",
]
