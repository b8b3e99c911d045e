"""TNS1 tensor encoding: magic, u8 rank, u32 extents, float32 little-endian values."""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..errors import CorruptionError, FormatError

MAGIC = b"TNS1"


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise FormatError("rank above 255 is not representable")
    head = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptionError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<B", _read_exact(f, 1))
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").astype(np.float32)
    return data.reshape(shape)


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    f.write(encode_tensor(arr))
