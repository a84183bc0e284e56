"""Versioned binary checkpoints.

Byte layout (all integers little-endian)::

    0   8 bytes   magic  b"ALANCKPT"
    8   u16       format version (currently 1)
    10  u32       header length N
    14  N bytes   UTF-8 JSON header, keys sorted (kind, dims, seed, ...)
    14+N u64      parameter count M
    22+N M*8      float64 parameters, flattened in registration order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ALANCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(header: dict, flat: np.ndarray) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    flat = np.ascontiguousarray(flat, dtype="<f8")
    return b"".join(
        [
            MAGIC,
            struct.pack("<HI", VERSION, len(head)),
            head,
            struct.pack("<Q", flat.size),
            flat.tobytes(),
        ]
    )


def decode(blob: bytes) -> tuple[dict, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<HI", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[14 : 14 + n].decode())
    (count,) = struct.unpack_from("<Q", blob, 14 + n)
    start = 22 + n
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=start).astype(np.float64)
    return header, flat


def save(path: str | Path, header: dict, flat: np.ndarray) -> None:
    Path(path).write_bytes(encode(header, flat))


def load(path: str | Path) -> tuple[dict, np.ndarray]:
    return decode(Path(path).read_bytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read(14)
        if blob[:8] != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        _, n = struct.unpack_from("<HI", blob, 8)
        return json.loads(fh.read(n).decode())
