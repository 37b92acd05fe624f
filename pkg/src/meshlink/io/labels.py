"""Label scheme text format: one ``id name r g b`` line per class."""

from __future__ import annotations

from pathlib import Path

from ..errors import BadFieldCount, InputError, UnparsableValue
from ..scene import LabelScheme
from ._atomic import write_text


def encode_label_scheme(scheme: LabelScheme) -> str:
    lines = ["# id name r g b"]
    for k in sorted(scheme.entries):
        name, (r, g, b) = scheme.entries[k]
        if not name or any(c.isspace() for c in name):
            raise InputError(f"label name {name!r} must be a single word")
        lines.append(f"{k} {name} {r} {g} {b}")
    return "\n".join(lines) + "\n"


def decode_label_scheme(text: str, name: str = "labels") -> LabelScheme:
    entries = {}
    for no, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if len(tok) != 5:
            raise BadFieldCount(f"{name}:{no}: expected 'id name r g b'")
        try:
            k, r, g, b = int(tok[0]), int(tok[2]), int(tok[3]), int(tok[4])
        except ValueError:
            raise UnparsableValue(f"{name}:{no}: {raw.strip()!r}") from None
        if not all(0 <= c <= 255 for c in (r, g, b)):
            raise UnparsableValue(f"{name}:{no}: color outside 0..255")
        if k in entries:
            raise InputError(f"{name}:{no}: label {k} defined twice")
        entries[k] = (tok[1], (r, g, b))
    return LabelScheme(entries)


def read_label_scheme(path) -> LabelScheme:
    try:
        return decode_label_scheme(Path(path).read_text(encoding="utf-8"), str(path))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def write_label_scheme(path, scheme: LabelScheme) -> None:
    write_text(path, encode_label_scheme(scheme))


__all__ = ["read_label_scheme", "write_label_scheme", "encode_label_scheme", "decode_label_scheme"]
