"""Parameter containers and weight layers built on the autodiff core.

Weight layers carry an ``input_domain`` tag (``"real"`` or ``"spike"``) that
the energy profiler uses to split MAC from ACC operations. While a
:class:`LayerTrace` is active, every weight layer appends a record of its
geometry and the observed density of its input.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .errors import ArgumentError

DOMAINS = ("real", "spike")

_trace_local = threading.local()


@dataclass
class LayerRecord:
    name: str
    kind: str
    input_domain: str
    weight_shape: tuple
    in_shape: tuple
    out_shape: tuple
    groups: int = 1
    input_density: float = 1.0
    binary_input: bool = False
    extra: dict = field(default_factory=dict)


class LayerTrace:
    """Collects :class:`LayerRecord` entries from weight layers run inside the block."""

    def __init__(self):
        self.records: list[LayerRecord] = []

    def __enter__(self):
        _trace_local.trace = self
        return self

    def __exit__(self, *exc):
        _trace_local.trace = None


def current_trace() -> LayerTrace | None:
    return getattr(_trace_local, "trace", None)


def _is_binary(a: np.ndarray) -> bool:
    return bool(np.all((a == 0) | (a == 1)))


def trace_layer(layer: "Module", kind: str, x: np.ndarray, y: np.ndarray, weight_shape=(), groups=1, **extra):
    tr = current_trace()
    if tr is None:
        return
    tr.records.append(LayerRecord(
        name=layer.qualname, kind=kind, input_domain=getattr(layer, "input_domain", "spike"),
        weight_shape=tuple(weight_shape), in_shape=tuple(x.shape), out_shape=tuple(y.shape), groups=groups,
        input_density=float(np.count_nonzero(x)) / max(x.size, 1), binary_input=_is_binary(x), extra=extra))


class Module:
    """Tree of sub-modules and parameters, walked in attribute insertion order."""

    def __init__(self):
        self.training = True
        self.qualname = ""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for key, child in self._children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def modules(self):
        return [m for _, m in self.named_modules()]

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for key, val in vars(self).items():
            if isinstance(val, np.ndarray) and key.startswith("running_"):
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}.{key}" if prefix else key)

    def assign_names(self) -> None:
        for name, mod in self.named_modules():
            mod.qualname = name

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _check_domain(domain: str) -> str:
    if domain not in DOMAINS:
        raise ArgumentError(f"input_domain must be one of {DOMAINS}, got {domain!r}")
    return domain


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dilation=1, groups=1,
                 bias=False, input_domain="spike", dtype=np.float32):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if c_in % groups or c_out % groups:
            raise ArgumentError(f"Conv2d channels {c_in}->{c_out} not divisible by groups={groups}")
        self.c_in, self.c_out, self.groups = c_in, c_out, groups
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.input_domain = _check_domain(input_domain)
        fan_in = (c_in // groups) * kh * kw
        self.weight = _uniform(rng, (c_out, c_in // groups, kh, kw), fan_in, dtype)
        self.bias = _uniform(rng, (c_out,), fan_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ArgumentError(f"{self.qualname or 'Conv2d'}: expected {self.c_in} input channels, got {x.shape}")
        y = ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)
        trace_layer(self, "conv", x.data, y.data, self.weight.shape, self.groups)
        return y


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=2, padding=0, input_domain="spike", dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.stride, self.padding = c_in, c_out, stride, padding
        self.input_domain = _check_domain(input_domain)
        self.weight = _uniform(rng, (c_in, c_out, kernel, kernel), c_in * kernel * kernel, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ArgumentError(f"{self.qualname or 'ConvTranspose2d'}: expected {self.c_in} channels, got {x.shape}")
        y = ops.conv_transpose2d(x, self.weight, self.stride, self.padding)
        trace_layer(self, "deconv", x.data, y.data, self.weight.shape)
        return y


class Linear(Module):
    def __init__(self, f_in, f_out, rng, bias=True, input_domain="spike", dtype=np.float32):
        super().__init__()
        self.f_in, self.f_out = f_in, f_out
        self.input_domain = _check_domain(input_domain)
        self.weight = _uniform(rng, (f_out, f_in), f_in, dtype)
        self.bias = _uniform(rng, (f_out,), f_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.linear(x, self.weight, self.bias)
        trace_layer(self, "linear", x.data, y.data, self.weight.shape)
        return y


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.input_domain = "real"
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)
        trace_layer(self, "bn", x.data, y.data, self.gamma.shape)
        return y

    def fold_scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode affine map y = scale * x + shift."""
        scale = self.gamma.data / np.sqrt(self.running_var + self.eps)
        return scale, self.beta.data - self.running_mean * scale
