"""Flat checkpoint container.

Layout: ``MAGIC``, an unsigned 64-bit little-endian header length, the UTF-8
JSON header, then every tensor's values as little-endian float64 in the order
the header lists them.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGCKPT01"


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    header = dict(meta)
    header["tensors"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<Q", len(blob)) + blob + body


def loads(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    offset = len(MAGIC)
    (length,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    header = json.loads(raw[offset : offset + length].decode("utf-8"))
    offset += length
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"truncated checkpoint while reading {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after the last tensor")
    return header, arrays


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
