"""NBT binary tensor files.

Layout: magic ``NBT1``, u32 little-endian rank, ``rank`` u32 extents,
then the row-major float32 little-endian payload. Used for weights,
activation dumps and embeddings.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NBT1"


class NbtError(ValueError):
    """Raised for malformed or truncated NBT files."""


def write_nbt(path, array: np.ndarray) -> None:
    """Write ``array`` to ``path``, converting to float32 if needed."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise NbtError(f"refusing to write non-finite values to {path}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4", copy=False).tobytes())


def read_nbt(path) -> np.ndarray:
    """Read an NBT file back as a float32 array."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise NbtError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise NbtError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    header_end = 8 + 4 * rank
    if len(raw) < header_end:
        raise NbtError(f"{path}: truncated extents (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = raw[header_end:]
    if len(payload) != 4 * count:
        raise NbtError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * count} "
            f"for shape {shape}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return arr.astype(np.float32, copy=True)
