"""Dense-map tensor (.dmt) file format.

Layout: magic b"DMT1", then three little-endian u32 fields (height, width,
channels), then the raw payload of height*width*channels float32 values,
little-endian, row-major with the channel axis minor (array shape (H, W, C)).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"DMT1"
_HEADER = struct.Struct("<4sIII")


def write_dmt(path: str | Path, values: np.ndarray) -> None:
    """Write a (H, W) or (H, W, C) array as a .dmt file."""
    arr = np.asarray(values)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise DataError(f"dmt payload must be 2-D or 3-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("dmt payload contains non-finite values")
    h, w, c = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c))
        fh.write(payload.tobytes())


def read_dmt(path: str | Path) -> np.ndarray:
    """Read a .dmt file, returning a float32 array of shape (H, W, C)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DataError(f"{path}: truncated dmt header")
        magic, h, w, c = _HEADER.unpack(header)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        expected = 4 * h * w * c
        payload = fh.read(expected + 1)
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload length {len(payload)} != expected {expected} bytes"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: payload contains non-finite values")
    return arr
