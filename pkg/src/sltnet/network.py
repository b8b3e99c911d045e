"""Full encoder-decoder assembly and its static layer graph.

Geometry for an H x W input with base width C::

    stem        C  x H   x W      (3 x conv3x3-BN-ESN, real-valued input)
    stage 1    2C  x H/2 x W/2    (downsample + 3 Spike-LD)
    stage 2    4C  x H/4 x W/4
    stage 3    8C  x H/8 x W/8
    narrow      C  x H/8 x W/8    (1x1 conv)
    stage 4     C  x H/8 x W/8    (2 STB, or 2 Spike-LD without STB)
    decoder    d1 x H/4, d2 x H/2, d3 x H   (Spike-LD, ESN, deconv x2, BN, ESN)
    heads      P1: classes x H x W from the last decoder stage
               P2: classes x H/4 x W/4 from the second decoder Spike-LD (training only)

Skips: stage 3 joins before decoder stage 1, stage 2 after it, stage 1 after
decoder stage 2, each through a feature-enhancement module.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .autodiff import Tensor, ops
from .blocks import STB, BlockEnv, Downsample, FeatureEnhance, SpikeLD, SpikeLDConfig, StbConfig
from .errors import ArgumentError, ConfigError
from .neuron import ESN, SHORTCUTS, NeuronConfig, Surrogate
from .nn import BatchNorm2d, ConvTranspose2d, LayerRecord, LayerTrace, Module


@dataclass
class NetworkConfig:
    base_channels: int = 32
    in_bins: int = 5
    num_classes: int = 6
    encoder_bottleneck: int = 8
    decoder_bottleneck: int = 4
    dilations: tuple = ((1, 2, 5), (1, 2, 5), (2, 5, 9))
    decoder_dilation: int = 2
    decoder_channels: tuple = (32, 32, 16)
    stb_heads: int = 4
    mlp_ratio: int = 4
    ca_reduction: int = 4
    shortcut: str = "ms"
    enable_fe: bool = True
    enable_stb: bool = True
    enable_skip_fusion: bool = True

    def __post_init__(self):
        self.dilations = tuple(tuple(int(d) for d in row) for row in self.dilations)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.validate()

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return c, 2 * c, 4 * c, 8 * c

    def validate(self) -> None:
        c = self.base_channels
        if c < 1 or self.in_bins < 1 or self.num_classes < 2:
            raise ConfigError("base_channels, in_bins must be positive and num_classes >= 2")
        if self.shortcut not in SHORTCUTS:
            raise ConfigError(f"shortcut must be one of {SHORTCUTS}, got {self.shortcut!r}")
        if len(self.dilations) != 3 or any(len(r) != 3 or min(r) < 1 for r in self.dilations):
            raise ConfigError("dilations must be three rows of three positive rates")
        if len(self.decoder_channels) != 3 or min(self.decoder_channels) < 1:
            raise ConfigError("decoder_channels must list three positive widths")
        for ch in self.stage_channels[1:]:
            m = ch // self.encoder_bottleneck
            if m < 1 or ch % self.encoder_bottleneck or m % self.ca_reduction or m >= ch:
                raise ConfigError(f"encoder bottleneck {self.encoder_bottleneck} invalid for {ch} channels")
        for ch in (c,) + self.decoder_channels[:2]:
            m = ch // self.decoder_bottleneck
            if m < 1 or ch % self.decoder_bottleneck or m % self.ca_reduction or m >= ch:
                raise ConfigError(f"decoder bottleneck {self.decoder_bottleneck} invalid for {ch} channels")
        if c % self.stb_heads:
            raise ConfigError(f"STB width {c} not divisible by {self.stb_heads} heads")
        for ch in self.decoder_channels[:2]:
            if ch % self.ca_reduction:
                raise ConfigError(f"decoder width {ch} not divisible by CA reduction {self.ca_reduction}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class ConvBnEsn(Module):
    def __init__(self, c_in, c_out, env: BlockEnv, input_domain="spike"):
        super().__init__()
        self.conv = env.conv(c_in, c_out, 3, padding=1, input_domain=input_domain)
        self.bn = env.bn(c_out)
        self.esn = env.esn()

    def forward(self, x):
        return self.esn(self.bn(self.conv(x)))


class Stage(Module):
    def __init__(self, c_in, c_out, dilations, bottleneck, env: BlockEnv, reduction):
        super().__init__()
        self.down = Downsample(c_in, c_out, env)
        self.blocks = [SpikeLD(SpikeLDConfig(c_out, c_out // bottleneck, d, reduction), env) for d in dilations]

    def forward(self, x):
        x = self.down(x)
        for b in self.blocks:
            x = b(x)
        return x


class DecoderStage(Module):
    def __init__(self, c_in, c_out, dilation, bottleneck, env: BlockEnv, reduction):
        super().__init__()
        self.spike_ld = SpikeLD(SpikeLDConfig(c_in, c_in // bottleneck, dilation, reduction), env)
        self.esn_mid = env.esn()
        self.up = ConvTranspose2d(c_in, c_out, 2, env.rng, stride=2, dtype=env.dtype)
        self.bn = env.bn(c_out)
        self.esn_out = env.esn()

    def forward(self, x: Tensor, skip: Tensor | None = None):
        ld = self.spike_ld(x)
        m = self.bn(self.up(self.esn_mid(ld)))
        if skip is not None:
            if skip.shape != m.shape:
                raise ArgumentError(f"skip {skip.shape} does not match decoder membrane {m.shape}")
            m = ops.add(m, skip)
        return self.esn_out(m), ld


class Head(Module):
    def __init__(self, c_in, num_classes, env: BlockEnv):
        super().__init__()
        self.esn_in = env.esn()
        self.conv = env.conv(c_in, c_in, 3, padding=1)
        self.bn = env.bn(c_in)
        self.esn = env.esn()
        self.cls = env.conv(c_in, num_classes, 1, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.cls(self.esn(self.bn(self.conv(self.esn_in(x)))))


@dataclass
class ForwardResult:
    p1: Tensor
    p2: Tensor | None
    rates: dict = field(default_factory=dict)


class SLTNet(Module):
    def __init__(self, cfg: NetworkConfig, neuron: NeuronConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.neuron = neuron or NeuronConfig()
        self.surrogate = Surrogate(k=self.neuron.k_min)
        self.dtype = np.dtype(dtype)
        env = BlockEnv(self.neuron, self.surrogate, np.random.default_rng(seed), dtype, cfg.shortcut)
        c, c2, c4, c8 = cfg.stage_channels
        d1, d2, d3 = cfg.decoder_channels
        r = cfg.ca_reduction
        self.stem = [ConvBnEsn(cfg.in_bins, c, env, input_domain="real"), ConvBnEsn(c, c, env), ConvBnEsn(c, c, env)]
        self.stage1 = Stage(c, c2, cfg.dilations[0], cfg.encoder_bottleneck, env, r)
        self.stage2 = Stage(c2, c4, cfg.dilations[1], cfg.encoder_bottleneck, env, r)
        self.stage3 = Stage(c4, c8, cfg.dilations[2], cfg.encoder_bottleneck, env, r)
        self.esn_narrow = env.esn()
        self.narrow = env.conv(c8, c, 1)
        self.bn_narrow = env.bn(c)
        if cfg.enable_stb:
            self.stage4 = [STB(StbConfig(c, cfg.stb_heads, cfg.mlp_ratio), env) for _ in range(2)]
        else:
            self.stage4 = [SpikeLD(SpikeLDConfig(c, c // cfg.decoder_bottleneck, d, r), env)
                           for d in cfg.dilations[2][1:]]
        if cfg.enable_skip_fusion:
            self.fe3 = FeatureEnhance(c8, c, env, r, enabled=cfg.enable_fe)
            self.fe2 = FeatureEnhance(c4, d1, env, r, enabled=cfg.enable_fe)
            self.fe1 = FeatureEnhance(c2, d2, env, r, enabled=cfg.enable_fe)
        dd, db = cfg.decoder_dilation, cfg.decoder_bottleneck
        self.dec1 = DecoderStage(c, d1, dd, db, env, r)
        self.dec2 = DecoderStage(d1, d2, dd, db, env, r)
        self.dec3 = DecoderStage(d2, d3, dd, db, env, r)
        self.head1 = Head(d3, cfg.num_classes, env)
        self.head2 = Head(d1, cfg.num_classes, env)
        self.assign_names()

    # neurons -------------------------------------------------------------------
    def neurons(self) -> list[ESN]:
        return [m for m in self.modules() if isinstance(m, ESN)]

    def reset_state(self) -> None:
        for n in self.neurons():
            n.reset_state()

    def set_surrogate_k(self, k: float) -> None:
        self.surrogate.k = float(k)

    def repconvs(self):
        return [rc for b in self.stage4 if isinstance(b, STB) for rc in b.repconvs()]

    def fold(self) -> None:
        """Fold every RepConv (uses eval-mode BN statistics) and switch to the folded form."""
        for rc in self.repconvs():
            rc.fold()
            rc.use_folded = True

    def unfold(self) -> None:
        for rc in self.repconvs():
            rc.use_folded = False

    def train(self, mode: bool = True):
        super().train(mode)
        if mode:
            self.unfold()
        return self

    # forward -------------------------------------------------------------------
    def _prepare(self, x) -> np.ndarray:
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        if x.ndim == 4:
            x = np.repeat(x[:, None], self.neuron.time_steps, axis=1)
        if x.ndim != 5:
            raise ArgumentError(f"expected (N, K, H, W) or (N, T, K, H, W) input, got {x.shape}")
        n, t, k, h, w = x.shape
        if k != self.cfg.in_bins:
            raise ArgumentError(f"input has {k} bins, network expects {self.cfg.in_bins}")
        if h % 8 or w % 8 or h < 8 or w < 8:
            raise ArgumentError(f"input extents {h}x{w} must be positive multiples of 8")
        return x.astype(self.dtype, copy=False)

    def _step(self, x: Tensor, want_p2: bool):
        s = x
        for layer in self.stem:
            s = layer(s)
        e1 = self.stage1(s)
        e2 = self.stage2(e1)
        e3 = self.stage3(e2)
        m = self.bn_narrow(self.narrow(self.esn_narrow(e3)))
        for blk in self.stage4:
            m = blk(m)
        fuse = self.cfg.enable_skip_fusion
        if fuse:
            m = ops.add(m, self.fe3(e3, m.shape[2:]))
        d1, _ = self.dec1(m, self.fe2(e2) if fuse else None)
        d2, ld2 = self.dec2(d1, self.fe1(e1) if fuse else None)
        d3, _ = self.dec3(d2)
        p1 = self.head1(d3)
        p2 = self.head2(ld2) if want_p2 else None
        return p1, p2

    def forward(self, x, mode: str | None = None) -> ForwardResult:
        if mode is not None:
            if mode not in ("train", "eval"):
                raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
            self.train(mode == "train")
        xs = self._prepare(x)
        h, w = xs.shape[3:]
        self.reset_state()
        p1s, p2s = [], []
        for t in range(xs.shape[1]):
            p1, p2 = self._step(Tensor(np.ascontiguousarray(xs[:, t])), want_p2=self.training)
            p1s.append(p1)
            if p2 is not None:
                p2s.append(p2)
        p1 = p1s[0] if len(p1s) == 1 else ops.scale(ops.add_n(p1s), 1.0 / len(p1s))
        if p1.shape[2:] != (h, w):
            p1 = ops.bilinear_upsample(p1, (h, w))
        p2 = None
        if p2s:
            p2 = p2s[0] if len(p2s) == 1 else ops.scale(ops.add_n(p2s), 1.0 / len(p2s))
        rates = {n.qualname: n.rate for n in self.neurons() if n.seen}
        return ForwardResult(p1, p2, rates)


def build(cfg: NetworkConfig, seed: int = 0, neuron: NeuronConfig | None = None, dtype=np.float32) -> SLTNet:
    return SLTNet(cfg, neuron, seed, dtype)


# layer graph -------------------------------------------------------------------

@dataclass
class LayerGraph:
    """Ordered weight-layer records traced at a reference input size."""
    records: list
    ref_hw: tuple

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def scale(self, hw: tuple[int, int]) -> tuple[Fraction, Fraction]:
        return Fraction(hw[0], self.ref_hw[0]), Fraction(hw[1], self.ref_hw[1])


def trace(net: SLTNet, x: np.ndarray, mode: str = "eval") -> tuple[LayerTrace, ForwardResult]:
    """Run one forward pass (no tape) while recording every weight layer."""
    was_training = net.training
    with LayerTrace() as tr:
        out = net.forward(x, mode=mode)
    net.train(was_training)
    return tr, out


def layer_graph(net: SLTNet, ref_hw: tuple[int, int] = (64, 64)) -> LayerGraph:
    x = np.zeros((1, 1, net.cfg.in_bins) + tuple(ref_hw), dtype=net.dtype)
    tr, _ = trace(net, x)
    return LayerGraph(list(tr.records), tuple(ref_hw))


def geometry_table(net: SLTNet, hw: tuple[int, int]) -> dict:
    """Output shape (C, H, W) of each major stage for an input of size hw."""
    x = Tensor(np.zeros((1, net.cfg.in_bins) + tuple(hw), dtype=net.dtype))
    was = net.training
    net.eval()
    net.reset_state()
    table = {}
    s = x
    for layer in net.stem:
        s = layer(s)
    table["stem"] = s.shape[1:]
    e1 = net.stage1(s)
    e2 = net.stage2(e1)
    e3 = net.stage3(e2)
    table.update(stage1=e1.shape[1:], stage2=e2.shape[1:], stage3=e3.shape[1:])
    m = net.bn_narrow(net.narrow(net.esn_narrow(e3)))
    table["narrow"] = m.shape[1:]
    for blk in net.stage4:
        m = blk(m)
    table["stage4"] = m.shape[1:]
    d1, _ = net.dec1(m)
    d2, ld2 = net.dec2(d1)
    d3, _ = net.dec3(d2)
    table.update(dec1=d1.shape[1:], dec2=d2.shape[1:], dec3=d3.shape[1:])
    table["p1"] = net.head1(d3).shape[1:]
    table["p2"] = net.head2(ld2).shape[1:]
    net.train(was)
    return table
