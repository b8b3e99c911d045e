"""Convolution kernels on raw arrays (NCHW layout, OIkhkw weights).

The fast path gathers the ``kh*kw`` shifted views into a column matrix and
issues one GEMM; depthwise convolutions skip the GEMM and accumulate per tap.
:func:`conv2d_reference` is the direct nested-loop definition kept as an oracle.
"""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError


def pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ArgumentError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def out_extent(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def transposed_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def _geometry(x_shape, w_shape, stride, padding, dilation, groups):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ArgumentError(f"conv2d expects 4-D input and weight, got {x_shape} and {w_shape}")
    n, c, h, w = x_shape
    o, cg, kh, kw = w_shape
    if groups < 1 or c % groups or o % groups:
        raise ArgumentError(f"channels {c}->{o} not divisible by groups={groups}")
    if cg != c // groups:
        raise ArgumentError(f"weight expects {cg * groups} input channels, input has {c}")
    sh, sw = pair(stride)
    ph, pw = pair(padding)
    dh, dw = pair(dilation)
    if min(sh, sw, dh, dw) < 1 or min(ph, pw) < 0:
        raise ArgumentError("stride and dilation must be >= 1, padding >= 0")
    ho = out_extent(h, kh, sh, ph, dh)
    wo = out_extent(w, kw, sw, pw, dw)
    if ho < 1 or wo < 1:
        raise ArgumentError(f"non-positive output extent {ho}x{wo}")
    return (n, c, h, w), (o, cg, kh, kw), (sh, sw), (ph, pw), (dh, dw), (ho, wo)


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _tap(xp, i, j, s, d, ho, wo):
    return xp[:, :, i * d[0]: i * d[0] + s[0] * (ho - 1) + 1: s[0],
              j * d[1]: j * d[1] + s[1] * (wo - 1) + 1: s[1]]


def _cols(xp, kh, kw, s, d, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = _tap(xp, i, j, s, d, ho, wo).transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def _is_depthwise(c, o, groups):
    return groups == c and o == c and groups > 1


def conv_forward(x, w, stride=1, padding=0, dilation=1, groups=1):
    (n, c, h, wd), (o, cg, kh, kw), s, p, d, (ho, wo) = _geometry(
        x.shape, w.shape, stride, padding, dilation, groups)
    xp = _pad(x, *p)
    if _is_depthwise(c, o, groups):
        out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                out += w[:, 0, i, j][None, :, None, None] * _tap(xp, i, j, s, d, ho, wo)
        return out
    if groups == 1:
        y = w.reshape(o, -1) @ _cols(xp, kh, kw, s, d, ho, wo)
        return y.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    og = o // groups
    parts = [conv_forward(x[:, g * cg:(g + 1) * cg], w[g * og:(g + 1) * og], s, p, d, 1)
             for g in range(groups)]
    return np.concatenate(parts, axis=1)


def conv_backward_input(gy, w, x_shape, stride=1, padding=0, dilation=1, groups=1):
    (n, c, h, wd), (o, cg, kh, kw), s, p, d, (ho, wo) = _geometry(
        x_shape, w.shape, stride, padding, dilation, groups)
    if gy.shape != (n, o, ho, wo):
        raise ArgumentError(f"gradient shape {gy.shape} does not match output {(n, o, ho, wo)}")
    gxp = np.zeros((n, c, h + 2 * p[0], wd + 2 * p[1]), dtype=np.result_type(gy, w))
    if _is_depthwise(c, o, groups):
        for i in range(kh):
            for j in range(kw):
                _tap(gxp, i, j, s, d, ho, wo)[...] += w[:, 0, i, j][None, :, None, None] * gy
    elif groups == 1:
        gcols = w.reshape(o, -1).T @ gy.transpose(1, 0, 2, 3).reshape(o, -1)
        gcols = gcols.reshape(c, kh, kw, n, ho, wo)
        for i in range(kh):
            for j in range(kw):
                _tap(gxp, i, j, s, d, ho, wo)[...] += gcols[:, i, j].transpose(1, 0, 2, 3)
    else:
        og = o // groups
        for g in range(groups):
            gxp[:, g * cg:(g + 1) * cg] += np.pad(
                conv_backward_input(gy[:, g * og:(g + 1) * og], w[g * og:(g + 1) * og],
                                    (n, cg, h, wd), s, p, d, 1),
                ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1])))
    return gxp[:, :, p[0]:p[0] + h, p[1]:p[1] + wd]


def conv_backward_weight(x, gy, w_shape, stride=1, padding=0, dilation=1, groups=1):
    (n, c, h, wd), (o, cg, kh, kw), s, p, d, (ho, wo) = _geometry(
        x.shape, w_shape, stride, padding, dilation, groups)
    xp = _pad(x, *p)
    if _is_depthwise(c, o, groups):
        gw = np.zeros(w_shape, dtype=np.result_type(x, gy))
        for i in range(kh):
            for j in range(kw):
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gy, _tap(xp, i, j, s, d, ho, wo))
        return gw
    if groups == 1:
        gy2 = gy.transpose(1, 0, 2, 3).reshape(o, -1)
        return (gy2 @ _cols(xp, kh, kw, s, d, ho, wo).T).reshape(w_shape)
    og = o // groups
    parts = [conv_backward_weight(x[:, g * cg:(g + 1) * cg], gy[:, g * og:(g + 1) * og],
                                  (og, cg, kh, kw), s, p, d, 1) for g in range(groups)]
    return np.concatenate(parts, axis=0)


def conv2d_reference(x, w, stride=1, padding=0, dilation=1, groups=1):
    """Direct definition of grouped, dilated cross-correlation (slow; tests only)."""
    (n, c, h, wd), (o, cg, kh, kw), s, p, d, (ho, wo) = _geometry(
        x.shape, w.shape, stride, padding, dilation, groups)
    og = o // groups
    out = np.zeros((n, o, ho, wo), dtype=np.result_type(x, w))
    for b in range(n):
        for oc in range(o):
            g = oc // og
            for yy in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for ic in range(cg):
                        for i in range(kh):
                            for j in range(kw):
                                r = yy * s[0] - p[0] + i * d[0]
                                q = xx * s[1] - p[1] + j * d[1]
                                if 0 <= r < h and 0 <= q < wd:
                                    acc += x[b, g * cg + ic, r, q] * w[oc, ic, i, j]
                    out[b, oc, yy, xx] = acc
    return out
