"""Network building blocks: Spike-LD, channel attention, downsampler, RepConv,
spike-driven self-attention (SDMSA), the spike transformer block and the
feature-enhancement module.

Convention: blocks receive and return *membrane* tensors (the residual stream).
Each block fires its input through a neuron before the first weight layer, so
every convolution except the network stem sees binary spikes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, make_op, ops
from .errors import ArgumentError, StateError, ValidationError
from .neuron import ESN, NeuronConfig, Surrogate, shortcut
from .nn import BatchNorm2d, Conv2d, LayerRecord, Linear, Module, current_trace, trace_layer


@dataclass
class BlockEnv:
    """Construction context shared by every block of one network."""
    neuron: NeuronConfig
    surrogate: Surrogate
    rng: np.random.Generator
    dtype: type = np.float32
    shortcut: str = "ms"
    # start every residual branch at zero output so deep stacks begin as identities
    zero_init_residual: bool = True

    def esn(self) -> ESN:
        return ESN(self.neuron, self.surrogate)

    def conv(self, c_in, c_out, kernel, **kw) -> Conv2d:
        return Conv2d(c_in, c_out, kernel, self.rng, dtype=self.dtype, **kw)

    def bn(self, c) -> BatchNorm2d:
        return BatchNorm2d(c, dtype=self.dtype)


@dataclass
class SpikeLDConfig:
    in_channels: int
    internal: int
    dilation: int = 2
    reduction: int = 4

    def __post_init__(self):
        if not 0 < self.internal < self.in_channels:
            raise ArgumentError(f"bottleneck width {self.internal} must be below {self.in_channels}")
        if self.dilation < 1:
            raise ArgumentError("dilation must be >= 1")
        if self.internal % self.reduction:
            raise ArgumentError(f"internal width {self.internal} not divisible by reduction {self.reduction}")


@dataclass
class StbConfig:
    channels: int
    heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.channels % self.heads:
            raise ArgumentError(f"{self.channels} channels not divisible by {self.heads} heads")


def _fuse(kind: str, trunk: Tensor, residual: Tensor, residual_spikes: Tensor,
          tail: ESN | None) -> Tensor:
    if kind == "ms":
        return shortcut("ms", trunk, residual)
    if kind == "vs":
        return shortcut("vs", trunk, residual_spikes)
    return shortcut("sew", tail(trunk), residual_spikes)


class ChannelAttention(Module):
    """GAP -> linear C->C/r -> ESN -> linear C/r->C -> sigmoid -> per-channel gate."""

    def __init__(self, channels: int, reduction: int, env: BlockEnv):
        super().__init__()
        if channels % reduction:
            raise ArgumentError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels, self.reduction = channels, reduction
        self.fc1 = Linear(channels, channels // reduction, env.rng, input_domain="real", dtype=env.dtype)
        self.esn = env.esn()
        self.fc2 = Linear(channels // reduction, channels, env.rng, input_domain="spike", dtype=env.dtype)

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.fc2(self.esn(self.fc1(ops.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ArgumentError(f"channel attention expects {self.channels} channels, got {x.shape}")
        y = ops.channel_scale(x, self.gate(x))
        trace_layer(self, "gate", x.data, y.data)
        return y


class SpikeLD(Module):
    """Bottleneck block: 1x1 compress, 1x3/3x1 decomposed convs, three depthwise
    branches (plain, dilated, dilated-decomposed), channel attention, 1x1 expand."""

    def __init__(self, cfg: SpikeLDConfig, env: BlockEnv):
        super().__init__()
        self.cfg, self.kind = cfg, env.shortcut
        c, m, d = cfg.in_channels, cfg.internal, cfg.dilation
        self.esn_in = env.esn()
        self.compress = env.conv(c, m, 1)
        self.bn_compress = env.bn(m)
        self.esn_compress = env.esn()
        self.conv13 = env.conv(m, m, (1, 3), padding=(0, 1))
        self.bn13 = env.bn(m)
        self.esn13 = env.esn()
        self.conv31 = env.conv(m, m, (3, 1), padding=(1, 0))
        self.bn31 = env.bn(m)
        self.esn31 = env.esn()
        self.dw = env.conv(m, m, 3, padding=1, groups=m)
        self.bn_dw = env.bn(m)
        self.dw_dil = env.conv(m, m, 3, padding=d, dilation=d, groups=m)
        self.bn_dw_dil = env.bn(m)
        self.dw_dil31 = env.conv(m, m, (3, 1), padding=(d, 0), dilation=(d, 1), groups=m)
        self.bn_dw_dil31 = env.bn(m)
        self.esn_dil31 = env.esn()
        self.dw_dil13 = env.conv(m, m, (1, 3), padding=(0, d), dilation=(1, d), groups=m)
        self.bn_dw_dil13 = env.bn(m)
        self.ca = ChannelAttention(m, cfg.reduction, env)
        self.esn_branches = env.esn()
        self.expand = env.conv(m, c, 1)
        self.bn_expand = env.bn(c)
        self.esn_tail = env.esn() if env.shortcut == "sew" else None
        if env.zero_init_residual:
            self.bn_expand.gamma.data[...] = 0

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ArgumentError(f"Spike-LD expects {self.cfg.in_channels} channels, got {x.shape}")
        s_in = self.esn_in(x)
        s = self.esn_compress(self.bn_compress(self.compress(s_in)))
        s = self.esn13(self.bn13(self.conv13(s)))
        s = self.esn31(self.bn31(self.conv31(s)))
        a = self.bn_dw(self.dw(s))
        b = self.bn_dw_dil(self.dw_dil(s))
        c = self.bn_dw_dil13(self.dw_dil13(self.esn_dil31(self.bn_dw_dil31(self.dw_dil31(s)))))
        gated = self.ca(ops.add_n([a, b, c]))
        y = self.bn_expand(self.expand(self.esn_branches(gated)))
        return _fuse(self.kind, y, x, s_in, self.esn_tail)


class Downsample(Module):
    """concat(3x3 stride-2 conv with C_out - C_in filters, 2x2 max-pool) -> BN -> ESN."""

    def __init__(self, c_in: int, c_out: int, env: BlockEnv):
        super().__init__()
        if c_out <= c_in:
            raise ArgumentError(f"downsampler must widen channels, got {c_in}->{c_out}")
        self.c_in, self.c_out = c_in, c_out
        self.esn_in = env.esn()
        self.conv = env.conv(c_in, c_out - c_in, 3, stride=2, padding=1)
        self.bn = env.bn(c_out)
        self.esn = env.esn()

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ArgumentError(f"downsampler expects {self.c_in} channels, got {x.shape}")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ArgumentError(f"downsampler needs even extents, got {x.shape[2]}x{x.shape[3]}")
        s = self.esn_in(x)
        pooled = ops.max_pool2d(s, 2)
        trace_layer(self, "pool", s.data, pooled.data)
        return self.esn(self.bn(ops.concat([self.conv(s), pooled], axis=1)))


class RepConv(Module):
    """3x3+BN, 1x1+BN and identity-BN branches summed; foldable into one 3x3 conv."""

    def __init__(self, channels: int, env: BlockEnv):
        super().__init__()
        self.channels = channels
        self.input_domain = "spike"
        self.conv3 = env.conv(channels, channels, 3, padding=1)
        self.bn3 = env.bn(channels)
        self.conv1 = env.conv(channels, channels, 1)
        self.bn1 = env.bn(channels)
        self.bn_id = env.bn(channels)
        self.folded_weight: np.ndarray | None = None
        self.folded_bias: np.ndarray | None = None
        self.use_folded = False

    def fold(self) -> None:
        """Merge the three branches (eval-mode BN) into a single kernel and bias."""
        c = self.channels
        s3, t3 = self.bn3.fold_scale_shift()
        s1, t1 = self.bn1.fold_scale_shift()
        si, ti = self.bn_id.fold_scale_shift()
        k = self.conv3.weight.data * s3[:, None, None, None]
        k = k.copy()
        k[:, :, 1, 1] += self.conv1.weight.data[:, :, 0, 0] * s1[:, None]
        k[np.arange(c), np.arange(c), 1, 1] += si
        self.folded_weight = k.astype(self.conv3.weight.dtype)
        self.folded_bias = (t3 + t1 + ti).astype(self.conv3.weight.dtype)

    def forward(self, x: Tensor, folded: bool | None = None) -> Tensor:
        folded = self.use_folded if folded is None else folded
        if folded:
            if self.folded_weight is None:
                raise StateError("RepConv.fold() must run before the folded form is used")
            y = ops.conv2d(x, Tensor(self.folded_weight), Tensor(self.folded_bias), padding=1)
            trace_layer(self, "conv", x.data, y.data, self.folded_weight.shape)
            return y
        return ops.add_n([self.bn3(self.conv3(x)), self.bn1(self.conv1(x)), self.bn_id(x)])


def sdmsa(q: Tensor, k: Tensor, v: Tensor, heads: int, validate: bool = True, name: str = "sdmsa") -> Tensor:
    """Per head: a = sum over the head's channels of q*k, output = a * v.

    No softmax and no scaling: with binary inputs the attention map holds
    integers in [0, channels/heads]. Cost is linear in the number of positions.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim != 4:
        raise ArgumentError(f"q, k, v must share an NCHW shape, got {q.shape}, {k.shape}, {v.shape}")
    n, c, h, w = q.shape
    if c % heads:
        raise ArgumentError(f"{c} channels not divisible by {heads} heads")
    if validate:
        for t in (q, k, v):
            if not np.all((t.data == 0) | (t.data == 1)):
                raise ValidationError("sdmsa expects binary spike inputs")
    shp = (n, heads, c // heads, h, w)
    qd, kd, vd = q.data.reshape(shp), k.data.reshape(shp), v.data.reshape(shp)
    a = (qd * kd).sum(axis=2, keepdims=True)
    out = (a * vd).reshape(n, c, h, w)

    def bwd(g):
        gg = g[0].reshape(shp)
        ga = (gg * vd).sum(axis=2, keepdims=True)
        return (ga * kd).reshape(q.shape), (ga * qd).reshape(q.shape), (gg * a).reshape(q.shape)

    tr = current_trace()
    if tr is not None:
        tr.records.append(LayerRecord(
            name=name, kind="sdmsa", input_domain="spike", weight_shape=(), in_shape=q.shape,
            out_shape=out.shape, input_density=float(np.count_nonzero(qd)) / max(qd.size, 1),
            binary_input=True, extra={"heads": heads}))
    return make_op(out, [q, k, v], bwd)


def sdmsa_reference(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    """Direct loop over samples, heads and positions."""
    n, c, h, w = q.shape
    ch = c // heads
    out = np.zeros_like(v)
    for b in range(n):
        for hd in range(heads):
            for y in range(h):
                for x in range(w):
                    a = 0
                    for j in range(hd * ch, (hd + 1) * ch):
                        a += q[b, j, y, x] * k[b, j, y, x]
                    for j in range(hd * ch, (hd + 1) * ch):
                        out[b, j, y, x] = a * v[b, j, y, x]
    return out


class STB(Module):
    """Spike transformer block: M' = M + RepConv4(SDMSA(Q, K, V)); M'' = M' + MLP(M')."""

    def __init__(self, cfg: StbConfig, env: BlockEnv):
        super().__init__()
        self.cfg, self.kind = cfg, env.shortcut
        c, hidden = cfg.channels, cfg.channels * cfg.mlp_ratio
        self.esn_in = env.esn()
        self.rep_q, self.rep_k, self.rep_v = RepConv(c, env), RepConv(c, env), RepConv(c, env)
        self.esn_q, self.esn_k, self.esn_v = env.esn(), env.esn(), env.esn()
        self.rep_o = RepConv(c, env)
        self.esn_attn_tail = env.esn() if env.shortcut == "sew" else None
        self.esn_mlp1 = env.esn()
        self.fc1 = env.conv(c, hidden, 1)
        self.bn_fc1 = env.bn(hidden)
        self.esn_mlp2 = env.esn()
        self.fc2 = env.conv(hidden, c, 1)
        self.bn_fc2 = env.bn(c)
        self.esn_mlp_tail = env.esn() if env.shortcut == "sew" else None
        if env.zero_init_residual:
            for bn in (self.rep_o.bn3, self.rep_o.bn1, self.rep_o.bn_id, self.bn_fc2):
                bn.gamma.data[...] = 0

    def forward(self, m: Tensor) -> Tensor:
        if m.ndim != 4 or m.shape[1] != self.cfg.channels:
            raise ArgumentError(f"STB expects {self.cfg.channels} channels, got {m.shape}")
        s = self.esn_in(m)
        q = self.esn_q(self.rep_q(s))
        k = self.esn_k(self.rep_k(s))
        v = self.esn_v(self.rep_v(s))
        attn = sdmsa(q, k, v, self.cfg.heads, validate=not self.esn_q.surrogate.smooth,
                     name=f"{self.qualname}.sdmsa")
        m1 = _fuse(self.kind, self.rep_o(attn), m, s, self.esn_attn_tail)
        s1 = self.esn_mlp1(m1)
        y = self.bn_fc2(self.fc2(self.esn_mlp2(self.bn_fc1(self.fc1(s1)))))
        return _fuse(self.kind, y, m1, s1, self.esn_mlp_tail)

    def repconvs(self) -> list[RepConv]:
        return [self.rep_q, self.rep_k, self.rep_v, self.rep_o]


class FeatureEnhance(Module):
    """Skip refinement: ESN -> DW 3x3 -> BN -> ESN -> PW 1x1 (to decoder width) -> BN -> CA.

    The result is a membrane contribution added to the decoder at matching resolution.
    With ``enabled=False`` only a 1x1 projection with BN remains (ablation wiring).
    """

    def __init__(self, c_skip: int, c_dec: int, env: BlockEnv, reduction: int = 4, enabled: bool = True):
        super().__init__()
        self.c_skip, self.c_dec, self.enabled = c_skip, c_dec, enabled
        self.esn_in = env.esn()
        if enabled:
            self.dw = env.conv(c_skip, c_skip, 3, padding=1, groups=c_skip)
            self.bn_dw = env.bn(c_skip)
            self.esn_dw = env.esn()
        self.pw = env.conv(c_skip, c_dec, 1)
        self.bn_pw = env.bn(c_dec)
        if enabled:
            self.ca = ChannelAttention(c_dec, reduction, env)

    def forward(self, skip: Tensor, target_hw: tuple[int, int] | None = None) -> Tensor:
        if skip.ndim != 4 or skip.shape[1] != self.c_skip:
            raise ArgumentError(f"feature enhancement expects {self.c_skip} channels, got {skip.shape}")
        if target_hw is not None and tuple(skip.shape[2:]) != tuple(target_hw):
            raise ArgumentError(f"skip resolution {skip.shape[2:]} does not match decoder {target_hw}")
        s = self.esn_in(skip)
        if self.enabled:
            s = self.esn_dw(self.bn_dw(self.dw(s)))
        y = self.bn_pw(self.pw(s))
        return self.ca(y) if self.enabled else y
