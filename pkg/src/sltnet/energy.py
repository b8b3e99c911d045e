"""Operation counting, firing-rate measurement, energy estimates and throughput.

Weight layers fed by real values count as multiply-accumulates (FL1); layers
fed by binary spikes count as accumulates (FL2). Spike-attention products are
accumulates as well. Batch norm, pooling and channel gating are itemized but
left out of both totals.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ArgumentError, ValidationError
from .nn import DOMAINS, LayerRecord

E_MAC_PJ = 4.6
E_ACC_PJ = 0.9
COUNTED_KINDS = ("conv", "deconv", "linear", "sdmsa")
ITEMIZED_KINDS = ("bn", "pool", "gate")


@dataclass
class LayerOps:
    name: str
    kind: str
    domain: str
    ops: int
    counted: bool
    input_density: float = 1.0


@dataclass
class OpsReport:
    layers: list
    fl1: int
    fl2: int
    size: tuple

    def itemized(self) -> list:
        return [l for l in self.layers if not l.counted]


@dataclass
class EnergyReport:
    layers: list
    fl1: int
    fl2: int
    time_steps: int
    r_mode: str
    rate: float
    e_mac_pj: float
    e_acc_pj: float
    energy_mj: float
    layer_rates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _scaled(extent: int, factor: Fraction, name: str) -> int:
    v = extent * factor
    if v.denominator != 1:
        raise ArgumentError(f"{name}: extent {extent} does not scale to an integer at this input size")
    return int(v)


def layer_ops(rec: LayerRecord, fy: Fraction = Fraction(1), fx: Fraction = Fraction(1)) -> int:
    """Multiply-add count of one traced layer, for a single sample."""
    if rec.kind == "linear":
        return math.prod(rec.weight_shape)
    _, _, ho, wo = rec.out_shape
    _, _, hi, wi = rec.in_shape
    ho, wo = _scaled(ho, fy, rec.name), _scaled(wo, fx, rec.name)
    hi, wi = _scaled(hi, fy, rec.name), _scaled(wi, fx, rec.name)
    if rec.kind == "conv":
        c_out, c_in_g, kh, kw = rec.weight_shape
        return c_out * ho * wo * c_in_g * kh * kw
    if rec.kind == "deconv":
        c_in, c_out, kh, kw = rec.weight_shape
        return c_in * hi * wi * c_out * kh * kw
    if rec.kind == "sdmsa":
        # q*k product, channel sum, and the gate applied to v
        return 3 * rec.out_shape[1] * ho * wo
    if rec.kind == "bn":
        return 2 * rec.out_shape[1] * ho * wo
    if rec.kind == "pool":
        return rec.out_shape[1] * ho * wo * (hi // ho) * (wi // wo)
    if rec.kind == "gate":
        return rec.out_shape[1] * ho * wo
    raise ValidationError(f"{rec.name}: unknown layer kind {rec.kind!r}")


def count_ops(graph, size: tuple[int, int] | None = None) -> OpsReport:
    """Per-layer counts at the given input size (defaults to the graph's reference size)."""
    ref = tuple(graph.ref_hw)
    size = ref if size is None else tuple(size)
    fy, fx = Fraction(size[0], ref[0]), Fraction(size[1], ref[1])
    layers, fl1, fl2 = [], 0, 0
    for rec in graph.records:
        if rec.input_domain not in DOMAINS:
            raise ValidationError(f"{rec.name}: layer has no valid domain tag ({rec.input_domain!r})")
        n = layer_ops(rec, fy, fx)
        counted = rec.kind in COUNTED_KINDS
        if counted:
            if rec.input_domain == "real":
                fl1 += n
            else:
                fl2 += n
        layers.append(LayerOps(rec.name, rec.kind, rec.input_domain, n, counted, rec.input_density))
    return OpsReport(layers, fl1, fl2, size)


def energy_mj(fl1: float, fl2: float, time_steps: int = 1, rate: float = 0.5,
              e_mac_pj: float = E_MAC_PJ, e_acc_pj: float = E_ACC_PJ) -> float:
    """E = E_mac * FL1 + E_acc * FL2 * T * R, in millijoules (energies given in pJ)."""
    return (e_mac_pj * fl1 + e_acc_pj * fl2 * time_steps * rate) * 1e-9


def estimate_energy(counts: OpsReport | tuple, time_steps: int = 1, rate: float = 0.5,
                    e_mac_pj: float = E_MAC_PJ, e_acc_pj: float = E_ACC_PJ) -> EnergyReport:
    """Fixed firing-rate estimate. ``counts`` is an OpsReport or a (FL1, FL2) pair."""
    if isinstance(counts, OpsReport):
        fl1, fl2, layers = counts.fl1, counts.fl2, [asdict(l) for l in counts.layers]
    else:
        fl1, fl2 = counts
        layers = []
    if fl1 < 0 or fl2 < 0:
        raise ValidationError("operation counts must be non-negative")
    if not 0.0 <= rate <= 1.0:
        raise ValidationError(f"firing rate must lie in [0, 1], got {rate}")
    if time_steps < 1:
        raise ValidationError("time_steps must be >= 1")
    e = energy_mj(fl1, fl2, time_steps, rate, e_mac_pj, e_acc_pj)
    return EnergyReport(layers, fl1, fl2, time_steps, "fixed", rate, e_mac_pj, e_acc_pj, e)


def estimate_energy_measured(counts: OpsReport, time_steps: int = 1,
                             e_mac_pj: float = E_MAC_PJ, e_acc_pj: float = E_ACC_PJ) -> EnergyReport:
    """Per-layer rates: each spike-fed layer's ACC count is scaled by its observed input density."""
    acc = 0.0
    rates = {}
    for l in counts.layers:
        if l.counted and l.domain == "spike":
            acc += l.ops * l.input_density
            rates[l.name] = l.input_density
    if not rates:
        raise ValidationError("no spike-domain layers to measure")
    mean_rate = acc / counts.fl2 if counts.fl2 else 0.0
    e = (e_mac_pj * counts.fl1 + e_acc_pj * acc * time_steps) * 1e-9
    return EnergyReport([asdict(l) for l in counts.layers], counts.fl1, counts.fl2, time_steps, "measured",
                        mean_rate, e_mac_pj, e_acc_pj, e, rates)


def firing_rate(spikes: np.ndarray) -> float:
    spikes = np.asarray(spikes)
    if spikes.size == 0:
        raise ValidationError("empty spike tensor")
    return float(np.count_nonzero(spikes)) / spikes.size


def measure_rates(record: dict) -> dict:
    """Validate and return per-neuron firing rates from a forward pass's activation record."""
    if not record:
        raise ValidationError("activation record is empty")
    for name, r in record.items():
        if not 0.0 <= r <= 1.0:
            raise ValidationError(f"{name}: rate {r} outside [0, 1]")
    return dict(record)


def benchmark_fps(net, size: tuple[int, int], warmup: int = 2, iters: int = 10, batch: int = 1) -> dict:
    """Median wall-clock latency of eval-mode forward passes with folded RepConvs."""
    if iters < 1 or warmup < 0:
        raise ArgumentError("iters must be >= 1 and warmup >= 0")
    net.eval()
    net.fold()
    x = np.zeros((batch, net.cfg.in_bins) + tuple(size), dtype=net.dtype)
    x[:, :, ::3, ::5] = 1.0
    for _ in range(warmup):
        net.forward(x)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        net.forward(x)
        times.append(time.perf_counter() - t0)
    lat = statistics.median(times)
    return {"size": list(size), "batch": batch, "iters": iters, "warmup": warmup,
            "latency_ms": lat * 1e3, "fps": batch / lat, "config_digest": net.cfg.digest()}
