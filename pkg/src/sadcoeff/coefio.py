"""COEF: a tiny binary container for 2-D float32 arrays.

Layout (all little-endian):

    bytes 0..3    magic ``b"SDTC"``
    bytes 4..7    format version, uint32, currently 1
    bytes 8..11   rows, uint32
    bytes 12..15  dim, uint32
    bytes 16..    rows * dim float32 payload, row-major

Writing goes through ``np.float32`` raw bytes, so any finite float32 value
(signed zeros, subnormals, extreme exponents) round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

MAGIC = b"SDTC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_coef(path, array) -> None:
    """Write a (rows, dim) array as float32. 1-D input is treated as (n, 1)."""
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"COEF payload must be 1-D or 2-D, got shape {a.shape}")
    a = np.ascontiguousarray(a, dtype="<f4")
    rows, dim = a.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, rows, dim))
        f.write(a.tobytes())


def read_coef(path) -> np.ndarray:
    """Read a COEF file back as a (rows, dim) float32 array."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated COEF header ({len(data)} bytes)")
    magic, version, rows, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported COEF version {version}")
    need = _HEADER.size + 4 * rows * dim
    if len(data) != need:
        raise FormatError(
            f"{path}: payload size mismatch, header implies {need} bytes, file has {len(data)}"
        )
    a = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return a.reshape(rows, dim).copy()
