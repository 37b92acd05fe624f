"""Line-oriented ``key = value`` run configuration.

Recognized keys::

    pcma.levels          = 0.05:0.05,0.10:0.10,0.15:0.15   (theta-:theta+ per level)
    pcma.boundary_policy = exclude | include
    pcma.edge_tolerance  = 1e-9
    imgma.depth_tie_tol  = 1e-9
    threads              = 4
    seed                 = 0

Blank lines and ``#`` comments are ignored.  A missing file yields defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..errors import InputError, UnknownKey, UnparsableValue
from ..imgma import ImgmaConfig
from ..pcma import BoundaryPolicy, PcmaConfig, ThresholdSchedule
from ._atomic import write_text


@dataclass(frozen=True)
class RunConfig:
    pcma: PcmaConfig = field(default_factory=PcmaConfig)
    imgma: ImgmaConfig = field(default_factory=ImgmaConfig)
    threads: Optional[int] = None
    seed: int = 0


def parse_levels(text: str) -> ThresholdSchedule:
    levels = []
    for part in text.split(","):
        lo, sep, hi = part.strip().partition(":")
        if not sep:
            raise UnparsableValue(f"threshold level {part!r} is not theta-:theta+")
        try:
            levels.append((float(lo), float(hi)))
        except ValueError:
            raise UnparsableValue(f"threshold level {part!r} is not numeric") from None
    try:
        return ThresholdSchedule(tuple(levels))
    except InputError as exc:
        raise UnparsableValue(str(exc)) from None


def _float(key, v):
    try:
        x = float(v)
    except ValueError:
        raise UnparsableValue(f"{key}: {v!r} is not a number") from None
    if not x >= 0:
        raise UnparsableValue(f"{key}: must be non-negative")
    return x


def _int(key, v, lo):
    try:
        x = int(v)
    except ValueError:
        raise UnparsableValue(f"{key}: {v!r} is not an integer") from None
    if x < lo:
        raise UnparsableValue(f"{key}: must be >= {lo}")
    return x


def _policy(key, v):
    try:
        return BoundaryPolicy(v.lower())
    except ValueError:
        raise UnparsableValue(f"{key}: expected exclude or include, got {v!r}") from None


def decode_config(text: str, name: str = "config") -> RunConfig:
    cfg = RunConfig()
    pc, ic = cfg.pcma, cfg.imgma
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise UnparsableValue(f"{name}:{no}: expected key = value")
        if key == "pcma.levels":
            pc = replace(pc, schedule=parse_levels(val))
        elif key == "pcma.boundary_policy":
            pc = replace(pc, boundary_policy=_policy(key, val))
        elif key == "pcma.edge_tolerance":
            pc = replace(pc, edge_tolerance=_float(key, val))
        elif key == "imgma.depth_tie_tol":
            ic = replace(ic, depth_tie_tol=_float(key, val))
        elif key == "threads":
            cfg = replace(cfg, threads=_int(key, val, 1))
        elif key == "seed":
            cfg = replace(cfg, seed=_int(key, val, 0))
        else:
            raise UnknownKey(f"{name}:{no}: unknown key {key!r}")
    return replace(cfg, pcma=pc, imgma=ic)


def encode_config(cfg: RunConfig) -> str:
    lines = [
        f"pcma.levels = {cfg.pcma.schedule.encode()}",
        f"pcma.boundary_policy = {cfg.pcma.boundary_policy.value}",
        f"pcma.edge_tolerance = {cfg.pcma.edge_tolerance!r}",
        f"imgma.depth_tie_tol = {cfg.imgma.depth_tie_tol!r}",
    ]
    if cfg.threads is not None:
        lines.append(f"threads = {cfg.threads}")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def read_config(path=None) -> RunConfig:
    if path is None or not Path(path).exists():
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return decode_config(text, str(path))


def write_config(path, cfg: RunConfig) -> None:
    write_text(path, encode_config(cfg))


__all__ = ["RunConfig", "read_config", "write_config", "decode_config", "encode_config", "parse_levels"]
