"""Minimal NCHW tensor library with tape-based reverse-mode differentiation."""
from . import ops
from .conv import conv2d_reference
from .serialize import encode_tensor, read_tensor, write_tensor
from .tensor import Tape, Tensor, active_tape, backward, make_op

__all__ = [
    "Tape", "Tensor", "active_tape", "backward", "make_op", "ops",
    "conv2d_reference", "encode_tensor", "read_tensor", "write_tensor",
]
