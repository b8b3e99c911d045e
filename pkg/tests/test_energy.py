import numpy as np
import pytest

from sltnet.autodiff import Tensor
from sltnet.energy import (OpsReport, benchmark_fps, count_ops, energy_mj, estimate_energy,
                           estimate_energy_measured, firing_rate, layer_ops, measure_rates)
from sltnet.errors import ValidationError
from sltnet.network import LayerGraph, NetworkConfig, build, layer_graph
from sltnet.nn import Conv2d, LayerRecord, LayerTrace

TABLE = [  # (FL1 MAC, FL2 ACC, printed mJ)
    (131e6, 1830e6, 1.42),
    (1435e6, 2617e6, 7.78),
    (264e6, 35176e6, 17.04),
    (9322e6, 0, 42.88),
    (29730e6, 0, 136.76),
    (11700e6, 0, 53.82),
]


@pytest.mark.parametrize("fl1,fl2,mj", TABLE)
def test_energy_table_rows(fl1, fl2, mj):
    assert abs(estimate_energy((fl1, fl2)).energy_mj - mj) <= 0.01


def test_energy_is_bit_exact_recomputation():
    rep = estimate_energy((123456789, 987654321), time_steps=2, rate=0.37)
    again = (rep.e_mac_pj * rep.fl1 + rep.e_acc_pj * rep.fl2 * rep.time_steps * rep.rate) * 1e-9
    assert rep.energy_mj == again


def test_energy_pure_mac_and_negative_counts():
    assert estimate_energy((1e9, 0)).energy_mj == pytest.approx(4.6)
    with pytest.raises(ValidationError):
        estimate_energy((-1, 0))
    with pytest.raises(ValidationError):
        estimate_energy((1, 1), rate=1.5)


def _single_conv_graph(c_in=3, c_out=8, hw=32, domain="real"):
    conv = Conv2d(c_in, c_out, 3, np.random.default_rng(0), padding=1, input_domain=domain)
    conv.qualname = "conv"
    with LayerTrace() as tr:
        conv(Tensor(np.ones((1, c_in, hw, hw), dtype=np.float32)))
    return LayerGraph(tr.records, (hw, hw))


def test_conv_count_example():
    rep = count_ops(_single_conv_graph())
    assert rep.fl1 == 8 * 32 * 32 * 3 * 9 == 221_184 and rep.fl2 == 0


def test_conv_count_scaling_law():
    g = _single_conv_graph()
    assert count_ops(g, (64, 64)).fl1 == 4 * count_ops(g, (32, 32)).fl1


def brute_conv_count(c_in, c_out, k, groups, stride, pad, dil, h, w):
    """Count one multiply-add per (output element, kernel tap, input channel in group)."""
    n = 0
    ho = (h + 2 * pad - dil * (k - 1) - 1) // stride + 1
    wo = (w + 2 * pad - dil * (k - 1) - 1) // stride + 1
    for _co in range(c_out):
        for _y in range(ho):
            for _x in range(wo):
                for _ci in range(c_in // groups):
                    for _ky in range(k):
                        for _kx in range(k):
                            n += 1
    return n


@pytest.mark.parametrize("c_in,c_out,k,groups,stride,pad,dil,h,w", [
    (4, 6, 3, 1, 1, 1, 1, 7, 5),
    (4, 4, 3, 4, 1, 2, 2, 6, 6),
    (6, 3, 1, 3, 2, 0, 1, 8, 4),
    (2, 8, 3, 2, 2, 1, 1, 9, 7),
])
def test_count_matches_brute_force(c_in, c_out, k, groups, stride, pad, dil, h, w):
    conv = Conv2d(c_in, c_out, k, np.random.default_rng(0), stride=stride, padding=pad, dilation=dil,
                  groups=groups)
    conv.qualname = "c"
    with LayerTrace() as tr:
        conv(Tensor(np.zeros((1, c_in, h, w), dtype=np.float32)))
    assert layer_ops(tr.records[0]) == brute_conv_count(c_in, c_out, k, groups, stride, pad, dil, h, w)


def test_untagged_layer_rejected():
    rec = LayerRecord("x", "conv", "analog", (1, 1, 1, 1), (1, 1, 2, 2), (1, 1, 2, 2))
    with pytest.raises(ValidationError):
        count_ops(LayerGraph([rec], (2, 2)))


@pytest.fixture(scope="module")
def small_net():
    net = build(NetworkConfig(num_classes=4), seed=0)
    net.eval()
    return net


def test_network_first_layer_is_real_and_rest_consistent(small_net):
    g = layer_graph(small_net)
    weight_layers = [r for r in g.records if r.kind in ("conv", "deconv", "linear")]
    assert weight_layers[0].name == "stem.0.conv" and weight_layers[0].input_domain == "real"
    for r in weight_layers:
        if r.input_domain == "spike":
            assert r.binary_input, r.name
    real = {r.name for r in weight_layers if r.input_domain == "real"}
    assert real == {"stem.0.conv"} | {r.name for r in weight_layers if r.name.endswith("ca.fc1")}


def test_network_counts_scale_with_area(small_net):
    g = layer_graph(small_net)
    a, b = count_ops(g, (64, 64)), count_ops(g, (128, 128))
    conv_a = sum(l.ops for l in a.layers if l.kind in ("conv", "deconv", "sdmsa"))
    conv_b = sum(l.ops for l in b.layers if l.kind in ("conv", "deconv", "sdmsa"))
    assert conv_b == 4 * conv_a


def test_itemized_kinds_excluded(small_net):
    rep = count_ops(layer_graph(small_net))
    kinds = {l.kind for l in rep.itemized()}
    assert kinds == {"bn", "pool", "gate"}
    assert rep.fl1 + rep.fl2 == sum(l.ops for l in rep.layers if l.counted)


def test_measured_rates_energy_not_above_fixed_when_sparse(small_net):
    x = np.zeros((2, 5, 64, 64), dtype=np.float32)
    x[:, :, 20:30, 20:40] = 1.0
    with LayerTrace() as tr:
        out = small_net.forward(x)
    counts = count_ops(LayerGraph(tr.records, (64, 64)))
    measured = estimate_energy_measured(counts)
    fixed = estimate_energy(counts)
    assert measured.rate < 0.5
    assert measured.energy_mj <= fixed.energy_mj
    rates = measure_rates(out.rates)
    assert all(0 <= r <= 1 for r in rates.values())


def test_zero_input_early_rates_near_zero(small_net):
    out = small_net.forward(np.zeros((1, 5, 64, 64), dtype=np.float32))
    assert out.rates["stem.0.esn"] <= 0.05
    assert np.all(np.isfinite(out.p1.data))


def test_rate_helpers():
    assert firing_rate(np.ones((3, 4))) == 1.0
    with pytest.raises(ValidationError):
        measure_rates({})


def test_benchmark_report(small_net):
    rep = benchmark_fps(small_net, (32, 32), warmup=0, iters=1)
    assert rep["iters"] == 1 and rep["fps"] > 0
    assert rep["config_digest"] == small_net.cfg.digest()
