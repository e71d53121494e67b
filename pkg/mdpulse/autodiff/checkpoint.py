"""
Named-tensor checkpoint container.

Layout:
    b"MDPULSE-CKPT 1\\n"
    JSON header, one line
    uint32 tensor count
    per tensor, in sorted name order:
        uint32 name length, utf-8 name, uint32 ndim, ndim x uint64 dims,
        little-endian float64 payload
All integers are little-endian.
"""

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from mdpulse.atomic import atomic_write_bytes
from mdpulse.errors import IoError

MAGIC = b"MDPULSE-CKPT 1\n"


def encode_checkpoint(tensors: Mapping[str, np.ndarray], header: Mapping = None) -> bytes:
    parts = [MAGIC, json.dumps(dict(header or {}), sort_keys=True).encode("utf-8") + b"\n"]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], header: Mapping = None) -> Path:
    return atomic_write_bytes(path, encode_checkpoint(tensors, header))


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Returns (tensors by name, header dict)."""
    path = Path(path)
    if not path.exists():
        raise IoError(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise IoError(path, "not an mdpulse checkpoint")
    offset = len(MAGIC)
    try:
        end = raw.index(b"\n", offset)
        header = json.loads(raw[offset:end].decode("utf-8"))
    except ValueError as exc:
        raise IoError(path, "malformed checkpoint header") from exc
    offset = end + 1

    def take(fmt):
        nonlocal offset
        values = struct.unpack_from(fmt, raw, offset)
        offset += struct.calcsize(fmt)
        return values

    tensors = {}
    try:
        (count,) = take("<I")
        for _ in range(count):
            (name_len,) = take("<I")
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = take("<I")
            shape = take(f"<{ndim}Q")
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            tensors[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise IoError(path, "truncated checkpoint") from exc
    return tensors, header
