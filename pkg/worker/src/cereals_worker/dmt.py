"""Dense-map tensor (.dmt) codec.

Wire contract: magic b"DMT1", little-endian u32 height/width/channels, then
H*W*C float32 little-endian, row-major, channel axis minor.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4sIII")
MAGIC = b"DMT1"


class DmtError(ValueError):
    pass


def read_dmt(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DmtError(f"{path}: truncated header")
    magic, height, width, channels = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DmtError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * height * width * channels
    if len(raw) != expected:
        raise DmtError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    values = values.reshape(height, width, channels)
    if not np.all(np.isfinite(values)):
        raise DmtError(f"{path}: non-finite payload")
    return values


def write_dmt(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DmtError(f"payload must be (H, W) or (H, W, C), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DmtError("payload contains non-finite values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c))
        fh.write(arr.tobytes())
