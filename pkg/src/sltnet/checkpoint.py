"""Training state and its binary checkpoint format.

Layout (little-endian)::

    "SLT1"  u16 version  32-byte sha256(config text)
    u32 n + config text (utf-8, fully resolved)
    u32 completed epochs  u64 optimizer step
    u32 n + RNG state (JSON)
    u32 tensor count, then per tensor: u16 n + name (utf-8) + TNS1 record

Tensors appear in graph order: parameters, batch-norm buffers, then the
optimizer's first and second moments.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as config_mod
from .autodiff import encode_tensor, read_tensor
from .errors import CorruptionError, FormatError
from .events import atomic_write
from .network import SLTNet, build
from .neuron import evaf_k
from .optim import Adam

MAGIC = b"SLT1"
VERSION = 1


@dataclass
class TrainState:
    config: config_mod.RunConfig
    net: SLTNet
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0

    def surrogate_k(self, epoch: int | None = None) -> float:
        e = self.epoch if epoch is None else epoch
        n = self.config.optim.epochs
        nc = self.config.neuron
        return evaf_k(min(e, n - 1), n, nc.k_min, nc.k_max)


def new_state(cfg: config_mod.RunConfig, seed: int) -> TrainState:
    """Fresh state; network init and the training-loop stream both derive from ``seed``."""
    init_ss, loop_ss = np.random.SeedSequence(seed).spawn(2)
    net = build(cfg.net, seed=init_ss, neuron=cfg.neuron)
    opt = Adam(net.named_parameters(), cfg.optim)
    state = TrainState(cfg, net, opt, np.random.default_rng(loop_ss), 0)
    net.set_surrogate_k(state.surrogate_k())
    return state


def _named_tensors(state: TrainState):
    for name, p in state.net.named_parameters():
        yield name, p.data
    for name, b in state.net.named_buffers():
        yield name, b
    for name, _ in state.optimizer.params:
        yield "adam.m." + name, state.optimizer.m[name]
    for name, _ in state.optimizer.params:
        yield "adam.v." + name, state.optimizer.v[name]


def encode_checkpoint(state: TrainState) -> bytes:
    text = state.config.to_text().encode()
    rng_json = json.dumps(state.rng.bit_generator.state, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<H", VERSION), hashlib.sha256(text).digest(),
           struct.pack("<I", len(text)), text,
           struct.pack("<IQ", state.epoch, state.optimizer.t),
           struct.pack("<I", len(rng_json)), rng_json]
    tensors = list(_named_tensors(state))
    out.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        nb = name.encode()
        out += [struct.pack("<H", len(nb)), nb, encode_tensor(arr)]
    return b"".join(out)


def save_checkpoint(state: TrainState, path) -> None:
    atomic_write(path, encode_checkpoint(state))


class _Reader:
    def __init__(self, buf: bytes):
        self.f = io.BytesIO(buf)

    def take(self, n: int) -> bytes:
        b = self.f.read(n)
        if len(b) != n:
            raise CorruptionError(f"checkpoint truncated: wanted {n} bytes, got {len(b)}")
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> TrainState:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("not an SLT1 checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    text = r.take(n)
    if hashlib.sha256(text).digest() != digest:
        raise CorruptionError("config digest does not match the embedded config")
    cfg = config_mod.loads(text.decode(), "<checkpoint>")
    epoch, step = r.unpack("<IQ")
    (n,) = r.unpack("<I")
    rng_state = json.loads(r.take(n))
    state = new_state(cfg, 0)
    state.epoch = epoch
    state.optimizer.t = step
    state.rng.bit_generator.state = rng_state
    (count,) = r.unpack("<I")
    targets = dict(_named_tensors(state))
    if count != len(targets):
        raise FormatError(f"checkpoint holds {count} tensors, network expects {len(targets)}")
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        arr = read_tensor(r.f)
        if name not in targets:
            raise FormatError(f"unexpected tensor {name!r}")
        dst = targets[name]
        if dst.shape != arr.shape:
            raise FormatError(f"{name}: shape {arr.shape} != expected {dst.shape}")
        dst[...] = arr
    if r.f.read(1):
        raise CorruptionError("trailing bytes after last tensor")
    state.net.set_surrogate_k(state.surrogate_k())
    return state


def load_checkpoint(path) -> TrainState:
    return decode_checkpoint(Path(path).read_bytes())
