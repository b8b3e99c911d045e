"""Event streams: EVS1 file format, voxel grids, event tensors, PGM label maps.

EVS1 layout (little-endian)::

    "EVS1" | u16 W | u16 H | u64 N | N x {u16 x, u16 y, i64 t_us, i8 p, u8 pad}
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, CorruptionError, FormatError, ValidationError

EVS_MAGIC = b"EVS1"
HEADER = struct.Struct("<4sHHQ")
RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "i1"), ("pad", "u1")])
IGNORE_ID = 255


@dataclass(eq=False)
class EventStream:
    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z.copy(), z.copy(), z.astype(np.int8))

    @classmethod
    def from_records(cls, width: int, height: int, records) -> "EventStream":
        arr = np.asarray(list(records), dtype=np.int64).reshape(-1, 4)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(np.int8))

    def __len__(self) -> int:
        return int(self.t.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and all(
            np.array_equal(a, b) for a, b in
            zip((self.x, self.y, self.t, self.p), (other.x, other.y, other.t, other.p)))

    def validate(self) -> None:
        n = len(self)
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ValidationError("event field arrays have different lengths")
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise ValidationError(f"sensor geometry {self.width}x{self.height} out of range")
        if n == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 or self.y.max() >= self.height:
            raise ValidationError("event outside sensor bounds")
        if self.t.min() < 0:
            raise ValidationError("negative timestamp")
        if np.any(np.diff(self.t) < 0):
            raise ValidationError("timestamps decrease")
        if not np.all((self.p == 1) | (self.p == -1)):
            raise ValidationError("polarity must be -1 or +1")


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def encode_events(stream: EventStream) -> bytes:
    stream.validate()
    rec = np.zeros(len(stream), dtype=RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return HEADER.pack(EVS_MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()


def write_events(stream: EventStream, path) -> None:
    atomic_write(path, encode_events(stream))


def decode_events(buf: bytes) -> EventStream:
    if len(buf) < HEADER.size:
        raise CorruptionError("file shorter than the EVS1 header")
    magic, w, h, n = HEADER.unpack_from(buf)
    if magic != EVS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EVS_MAGIC!r}")
    body = len(buf) - HEADER.size
    if body != n * RECORD.itemsize:
        raise CorruptionError(f"header announces {n} records but body holds {body} bytes")
    rec = np.frombuffer(buf, dtype=RECORD, count=n, offset=HEADER.size)
    stream = EventStream(w, h, rec["x"].astype(np.int64), rec["y"].astype(np.int64),
                         rec["t"].astype(np.int64), rec["p"].astype(np.int8))
    stream.validate()
    return stream


def read_events(path) -> EventStream:
    return decode_events(Path(path).read_bytes())


# voxel grids ------------------------------------------------------------------

@dataclass
class VoxelGrid:
    values: np.ndarray  # (K, H, W) signed event counts

    @property
    def bins(self) -> int:
        return self.values.shape[0]


@dataclass
class EventTensor:
    values: np.ndarray  # (T, K, H, W)

    @property
    def time_steps(self) -> int:
        return self.values.shape[0]


def voxelize(stream: EventStream, dt_us: int = 50_000, bins: int = 5) -> VoxelGrid:
    """Signed polarity histogram; events whose bin index reaches ``bins`` are dropped."""
    if dt_us <= 0 or bins <= 0:
        raise ArgumentError("dt_us and bins must be positive")
    h, w = stream.height, stream.width
    k = stream.t // dt_us
    keep = k < bins
    flat = (k[keep] * h + stream.y[keep]) * w + stream.x[keep]
    counts = np.bincount(flat, weights=stream.p[keep].astype(np.float64), minlength=bins * h * w)
    return VoxelGrid(counts.reshape(bins, h, w).astype(np.float32))


def to_event_tensor(grid: VoxelGrid, time_steps: int = 1) -> EventTensor:
    """Replicate the grid over ``time_steps`` (static-input coding)."""
    if time_steps < 1:
        raise ArgumentError("time_steps must be >= 1")
    return EventTensor(np.repeat(grid.values[None], time_steps, axis=0))


# label maps ---------------------------------------------------------------------

def write_pgm(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValidationError("label map must be a 2-D array of values in [0, 255]")
    h, w = labels.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + labels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise CorruptionError("truncated PGM header")
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise FormatError(f"expected binary PGM 'P5', got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError("only maxval 255 is supported")
    data = buf[pos + 1:]
    if len(data) != w * h:
        raise CorruptionError(f"PGM body holds {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def check_labels(labels: np.ndarray, num_classes: int, ignore_id: int = IGNORE_ID) -> None:
    bad = (labels >= num_classes) & (labels != ignore_id)
    if np.any(bad):
        raise ValidationError(f"label values must be < {num_classes} or {ignore_id}")
