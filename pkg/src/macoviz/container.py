"""Versioned binary container for named float32 tensors ("MACOMDL1").

Layout, little-endian::

    8 bytes   magic "MACOMDL1"
    u32       tensor count
    per tensor:
        u32 name length, UTF-8 name
        u32 ndim, ndim x u32 dims
        prod(dims) x binary32, C-row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MACOMDL1"
_MAX_NDIM = 8


def encode_tensors(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value), dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_tensors(data: bytes) -> dict:
    if data[:8] != MAGIC:
        raise FormatError("bad magic bytes, not a tensor container", 0)
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError("truncated container", pos)
        values = struct.unpack_from(fmt, data, pos)
        pos += size
        return values

    (count,) = take("<I")
    out = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if pos + name_len > len(data):
            raise FormatError("truncated tensor name", pos)
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        start = pos
        (ndim,) = take("<I")
        if ndim > _MAX_NDIM:
            raise FormatError(f"tensor {name!r} declares {ndim} dimensions", start)
        dims = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if pos + 4 * n > len(data):
            raise FormatError(f"tensor {name!r} payload truncated", pos)
        out[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * n
    if pos != len(data):
        raise FormatError("trailing bytes after last tensor", pos)
    return out


def save_tensors(tensors: dict, path) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> dict:
    return decode_tensors(Path(path).read_bytes())
