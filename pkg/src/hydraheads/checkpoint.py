"""Named-tensor checkpoint files.

Layout::

    b"HYDR" | version (1 byte) | header length (uint32 LE) | header (UTF-8 JSON)
    | float32 LE payload, entries concatenated in manifest order

The header is canonical JSON (sorted keys, no whitespace) holding ``kind``,
``config``, ``meta`` and the ordered ``entries`` manifest of names and shapes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"HYDR"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")


class CheckpointError(Exception):
    pass


class NotACheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class HeaderMismatchError(CheckpointError):
    """Header is unreadable or disagrees with the payload it describes."""


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def n_reals(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode(kind: str, config: Mapping, entries: Iterable[tuple[str, np.ndarray]],
           meta: Mapping | None = None) -> bytes:
    entries = [(name, np.asarray(arr)) for name, arr in entries]
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("checkpoint entry names must be unique")
    header = canonical_json({
        "kind": kind,
        "config": dict(config),
        "meta": dict(meta or {}),
        "entries": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    })
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in entries)
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def decode(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _PREFIX.size:
        if MAGIC.startswith(blob[:4]):
            raise TruncatedCheckpointError(f"{source}: file ends inside the fixed prefix")
        raise NotACheckpointError(f"{source}: not a checkpoint file")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise NotACheckpointError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise TruncatedCheckpointError(f"{source}: file ends inside the header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        entries = [(e["name"], tuple(int(s) for s in e["shape"])) for e in header["entries"]]
        kind, config, meta = header["kind"], header["config"], header.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise HeaderMismatchError(f"{source}: unreadable header ({exc})") from None

    offset = start + hlen
    expected = offset + 4 * sum(int(np.prod(shape, dtype=np.int64)) for _, shape in entries)
    if len(blob) < expected:
        raise TruncatedCheckpointError(
            f"{source}: payload has {len(blob) - offset} bytes, header describes {expected - offset}"
        )
    if len(blob) > expected:
        raise HeaderMismatchError(f"{source}: {len(blob) - expected} trailing bytes beyond the manifest")
    tensors: dict[str, np.ndarray] = {}
    for name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = arr.astype(np.float32)
        offset += 4 * count
    return Checkpoint(kind=kind, config=config, tensors=tensors, meta=meta)


def save_checkpoint(path: str | Path, kind: str, config: Mapping,
                    entries: Iterable[tuple[str, np.ndarray]], meta: Mapping | None = None) -> int:
    """Write a checkpoint; returns the number of bytes written."""
    blob = encode(kind, config, entries, meta)
    Path(path).write_bytes(blob)
    return len(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes(), source=str(path))


def resave(ckpt: Checkpoint) -> bytes:
    return encode(ckpt.kind, ckpt.config, ckpt.tensors.items(), ckpt.meta)


def predicted_size(kind: str, config: Mapping, shapes: Iterable[tuple[str, tuple[int, ...]]],
                   meta: Mapping | None = None) -> int:
    """Exact file size for the given manifest, computed from shapes alone."""
    shapes = list(shapes)
    header = canonical_json({
        "kind": kind,
        "config": dict(config),
        "meta": dict(meta or {}),
        "entries": [{"name": n, "shape": list(s)} for n, s in shapes],
    })
    return _PREFIX.size + len(header) + 4 * sum(int(np.prod(s, dtype=np.int64)) for _, s in shapes)
