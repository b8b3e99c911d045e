"""Differentiable operations on :class:`Tensor`.

Broadcasting is deliberately limited to per-channel parameters (``(C,)``
vectors against NCHW maps, or ``(N, C)`` gates via :func:`channel_scale`).
Everything else requires equal shapes.
"""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from . import conv as _conv
from .tensor import Tensor, make_op


def _same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


# elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same(a, b, "add")
    return make_op(a.data + b.data, [a, b], lambda g: (g[0], g[0]))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same(a, b, "sub")
    return make_op(a.data - b.data, [a, b], lambda g: (g[0], -g[0]))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product."""
    _same(a, b, "hadamard")
    ad, bd = a.data, b.data
    return make_op(ad * bd, [a, b], lambda g: (g[0] * bd, g[0] * ad))


hadamard = mul


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return make_op(a.data * s, [a], lambda g: (g[0] * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return make_op(a.data + a.data.dtype.type(c), [a], lambda g: (g[0],))


def add_n(xs: list[Tensor]) -> Tensor:
    for x in xs[1:]:
        _same(xs[0], x, "add_n")
    out = xs[0].data.copy()
    for x in xs[1:]:
        out += x.data
    return make_op(out, xs, lambda g: [g[0]] * len(xs))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make_op(y, [a], lambda g: (g[0] * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make_op(y, [a], lambda g: (g[0] * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_op(a.data * mask, [a], lambda g: (g[0] * mask,))


# reductions and shape ------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return make_op(np.asarray(a.data.sum(), dtype=a.dtype).reshape(()), [a],
                   lambda g: (np.broadcast_to(g[0], shape),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make_op(np.asarray(a.data.mean(), dtype=a.dtype).reshape(()), [a],
                   lambda g: (np.broadcast_to(g[0] / n, shape),))


def masked_mean(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the entries selected by a boolean mask (mask is not differentiated)."""
    if mask.shape != a.shape:
        raise ArgumentError(f"mask shape {mask.shape} != {a.shape}")
    count = int(mask.sum())
    if count == 0:
        raise ArgumentError("masked_mean over an empty selection")
    val = a.data[mask].sum() / count
    weight = mask.astype(a.dtype) / count
    return make_op(np.asarray(val, dtype=a.dtype).reshape(()), [a], lambda g: (g[0] * weight,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_op(a.data.reshape(shape), [a], lambda g: (g[0].reshape(old),))


def concat(xs: list[Tensor], axis: int = 1) -> Tensor:
    base = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis):
            raise ArgumentError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        idx = [np.s_[:]] * g[0].ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = np.s_[lo:hi]
            out.append(g[0][tuple(idx)])
        return out

    return make_op(np.concatenate([x.data for x in xs], axis=axis), xs, bwd)


def slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    if not 0 <= start < stop <= a.shape[axis]:
        raise ArgumentError(f"slice [{start}:{stop}] out of range for extent {a.shape[axis]}")
    idx = [np.s_[:]] * a.ndim
    idx[axis] = np.s_[start:stop]
    idx = tuple(idx)
    shape, dtype = a.shape, a.dtype

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g[0]
        return (out,)

    return make_op(a.data[idx], [a], bwd)


def sum_over_channels(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, 1, H, W)."""
    if a.ndim != 4:
        raise ArgumentError("sum_over_channels expects NCHW input")
    shape = a.shape
    return make_op(a.data.sum(axis=1, keepdims=True), [a],
                   lambda g: (np.broadcast_to(g[0], shape),))


def channel_broadcast_mul(a: Tensor, v: Tensor) -> Tensor:
    """(N, 1, H, W) map times every channel of (N, C, H, W)."""
    if a.ndim != 4 or v.ndim != 4 or a.shape[1] != 1 or a.shape[0] != v.shape[0] or a.shape[2:] != v.shape[2:]:
        raise ArgumentError(f"channel_broadcast_mul: bad shapes {a.shape}, {v.shape}")
    ad, vd = a.data, v.data
    return make_op(ad * vd, [a, v], lambda g: ((g[0] * vd).sum(axis=1, keepdims=True), g[0] * ad))


def global_avg_pool(a: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    if a.ndim != 4:
        raise ArgumentError("global_avg_pool expects NCHW input")
    n, c, h, w = a.shape
    return make_op(a.data.mean(axis=(2, 3)), [a],
                   lambda g: (np.broadcast_to(g[0][:, :, None, None] / (h * w), a.shape),))


def channel_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Scale every channel map of x (N, C, H, W) by gate (N, C)."""
    if x.ndim != 4 or gate.shape != x.shape[:2]:
        raise ArgumentError(f"channel_scale: gate {gate.shape} does not match {x.shape}")
    xd, gd = x.data, gate.data[:, :, None, None]
    return make_op(xd * gd, [x, gate],
                   lambda g: (g[0] * gd, np.einsum("nchw,nchw->nc", g[0], xd)))


def max_pool2d(a: Tensor, k: int = 2) -> Tensor:
    if a.ndim != 4:
        raise ArgumentError("max_pool2d expects NCHW input")
    n, c, h, w = a.shape
    if h % k or w % k:
        raise ArgumentError(f"max_pool2d({k}) needs extents divisible by {k}, got {h}x{w}")
    blocks = a.data.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gb = np.zeros(blocks.shape, dtype=a.dtype)
        np.put_along_axis(gb, arg[..., None], g[0][..., None], axis=-1)
        gb = gb.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return make_op(out, [a], bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N, F_in) @ w.T (F_out, F_in) + b (F_out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ArgumentError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is None:
        return make_op(y, [x, w], lambda g: (g[0] @ wd, g[0].T @ xd))
    if b.shape != (w.shape[0],):
        raise ArgumentError(f"linear: bias {b.shape} does not match weight {w.shape}")
    return make_op(y + b.data, [x, w, b], lambda g: (g[0] @ wd, g[0].T @ xd, g[0].sum(axis=0)))


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    ratio = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_upsample(a: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize with half-pixel centers (align_corners=False)."""
    if a.ndim != 4:
        raise ArgumentError("bilinear_upsample expects NCHW input")
    ho, wo = size
    n, c, h, w = a.shape
    if (ho, wo) == (h, w):
        return make_op(a.data.copy(), [a], lambda g: (g[0],))
    ah = _interp_matrix(ho, h, a.dtype)
    aw = _interp_matrix(wo, w, a.dtype)
    y = np.einsum("oh,nchw,pw->ncop", ah, a.data, aw, optimize=True)
    return make_op(y, [a], lambda g: (np.einsum("oh,ncop,pw->nchw", ah, g[0], aw, optimize=True),))


# convolution and normalization --------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, dilation=1, groups=1) -> Tensor:
    xd, wd = x.data, w.data
    y = _conv.conv_forward(xd, wd, stride, padding, dilation, groups)
    geo = (stride, padding, dilation, groups)

    def bwd(g):
        gx = _conv.conv_backward_input(g[0], wd, xd.shape, *geo) if x.requires_grad else None
        gw = _conv.conv_backward_weight(xd, g[0], wd.shape, *geo) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g[0].sum(axis=(0, 2, 3))

    if b is None:
        return make_op(y, [x, w], bwd)
    if b.shape != (w.shape[0],):
        raise ArgumentError(f"conv2d: bias {b.shape} does not match {w.shape[0]} filters")
    return make_op(y + b.data[None, :, None, None], [x, w, b], bwd)


def conv_transpose2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """Adjoint of conv2d. ``w`` has layout (C_in, C_out, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ArgumentError(f"conv_transpose2d: input {x.shape} incompatible with weight {w.shape}")
    sh, sw = _conv.pair(stride)
    ph, pw = _conv.pair(padding)
    n, _, h, wd_ = x.shape
    ho = _conv.transposed_extent(h, w.shape[2], sh, ph)
    wo = _conv.transposed_extent(wd_, w.shape[3], sw, pw)
    if ho < 1 or wo < 1 or _conv.out_extent(ho, w.shape[2], sh, ph, 1) != h \
            or _conv.out_extent(wo, w.shape[3], sw, pw, 1) != wd_:
        raise ArgumentError(f"conv_transpose2d: invalid geometry for input {h}x{wd_}")
    out_shape = (n, w.shape[1], ho, wo)
    xd, wd = x.data, w.data
    y = _conv.conv_backward_input(xd, wd, out_shape, stride, padding)

    def bwd(g):
        gx = _conv.conv_forward(g[0], wd, stride, padding) if x.requires_grad else None
        gw = _conv.conv_backward_weight(g[0], xd, wd.shape, stride, padding) if w.requires_grad else None
        return gx, gw

    return make_op(y, [x, w], bwd)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization; updates running stats in place when training."""
    if x.ndim != 4:
        raise ArgumentError("batchnorm2d expects NCHW input")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,) or running_var.shape != (c,):
        raise ArgumentError(f"batchnorm2d: parameter lengths do not match {c} channels")
    m = n * h * w
    if m == 0:
        raise ArgumentError("batchnorm2d on an empty batch")
    xd = x.data
    gd, bd = gamma.data[None, :, None, None], beta.data[None, :, None, None]
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        xc = xd - mu[None, :, None, None]
        var = np.einsum("nchw,nchw->c", xc, xc) / m
        inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
        xhat = xc * inv[None, :, None, None]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def bwd(g):
            gy = g[0]
            dbeta = gy.sum(axis=(0, 2, 3))
            dgamma = np.einsum("nchw,nchw->c", gy, xhat)
            coef = (gamma.data * inv)[None, :, None, None]
            gx = coef * (gy - (dbeta / m)[None, :, None, None] - xhat * (dgamma / m)[None, :, None, None])
            return gx, dgamma, dbeta
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
        xhat = (xd - running_mean.astype(xd.dtype)[None, :, None, None]) * inv[None, :, None, None]

        def bwd(g):
            gy = g[0]
            return (gy * (gamma.data * inv)[None, :, None, None],
                    np.einsum("nchw,nchw->c", gy, xhat), gy.sum(axis=(0, 2, 3)))

    return make_op(xhat * gd + bd, [x, gamma, beta], bwd)


# losses --------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Per-pixel CE for logits (N, C, H, W) against integer labels (N, H, W).

    Ignored pixels get loss 0 and no gradient.
    """
    if logits.ndim != 4 or labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ArgumentError(f"labels {labels.shape} do not match logits {logits.shape}")
    z = logits.data
    c = z.shape[1]
    valid = labels != ignore_index
    safe = np.where(valid, labels, 0).astype(np.int64)
    if np.any(safe >= c) or np.any(safe < 0):
        raise ArgumentError(f"label outside [0, {c}) and not ignore id {ignore_index}")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = np.take_along_axis(shifted, safe[:, None], axis=1)[:, 0]
    loss = (lse - picked) * valid

    def bwd(g):
        p = np.exp(shifted - lse[:, None])
        np.put_along_axis(p, safe[:, None], np.take_along_axis(p, safe[:, None], axis=1) - 1.0, axis=1)
        return (p * (g[0] * valid)[:, None],)

    return make_op(loss.astype(z.dtype), [logits], bwd)
