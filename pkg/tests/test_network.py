import numpy as np
import pytest

from sltnet.blocks import STB, SpikeLD
from sltnet.errors import ArgumentError, ConfigError
from sltnet.network import NetworkConfig, build, geometry_table, layer_graph


@pytest.fixture(scope="module")
def net():
    return build(NetworkConfig(), seed=0)


def expected_geometry(h, w, c=32, k=6, dec=(32, 32, 16)):
    return {
        "stem": (c, h, w),
        "stage1": (2 * c, h // 2, w // 2),
        "stage2": (4 * c, h // 4, w // 4),
        "stage3": (8 * c, h // 8, w // 8),
        "narrow": (c, h // 8, w // 8),
        "stage4": (c, h // 8, w // 8),
        "dec1": (dec[0], h // 4, w // 4),
        "dec2": (dec[1], h // 2, w // 2),
        "dec3": (dec[2], h, w),
        "p1": (k, h, w),
        "p2": (k, h // 4, w // 4),
    }


@pytest.mark.parametrize("hw", [(64, 64), (128, 96)])
def test_geometry_table(net, hw):
    assert geometry_table(net, hw) == expected_geometry(*hw)


def test_parameter_count_in_band(net):
    n = net.num_parameters()
    assert 300_000 <= n <= 600_000
    assert build(NetworkConfig(), seed=5).num_parameters() == n


def test_parameter_count_independent_of_input(net):
    n = net.num_parameters()
    net.eval()
    for hw in [(16, 16), (32, 48)]:
        net.forward(np.zeros((1, 5) + hw, dtype=np.float32))
    assert net.num_parameters() == n


def test_eval_deterministic_and_seeded():
    x = (np.random.default_rng(1).random((2, 5, 32, 32)) < 0.1).astype(np.float32)
    a, b = build(NetworkConfig(), seed=2), build(NetworkConfig(), seed=2)
    a.eval(); b.eval()
    np.testing.assert_array_equal(a.forward(x).p1.data, b.forward(x).p1.data)
    np.testing.assert_array_equal(a.forward(x).p1.data, a.forward(x).p1.data)
    c = build(NetworkConfig(), seed=3).eval()
    assert not np.array_equal(a.forward(x).p1.data, c.forward(x).p1.data)


def test_zero_input_finite_and_p2_only_in_training(net):
    net.eval()
    out = net.forward(np.zeros((1, 5, 32, 32), dtype=np.float32))
    assert out.p2 is None and np.all(np.isfinite(out.p1.data))
    out = net.forward(np.zeros((1, 5, 32, 32), dtype=np.float32), mode="train")
    assert out.p2 is not None and out.p2.shape == (1, 6, 8, 8)
    net.eval()


def test_time_axis_input(net):
    net.eval()
    x = (np.random.default_rng(0).random((1, 5, 16, 16)) < 0.2).astype(np.float32)
    replicated = np.repeat(x[:, None], net.neuron.time_steps, axis=1)
    np.testing.assert_array_equal(net.forward(x).p1.data, net.forward(replicated).p1.data)


@pytest.mark.parametrize("shape", [(1, 4, 32, 32), (1, 5, 30, 32), (5, 32, 32)])
def test_bad_input_rejected(net, shape):
    with pytest.raises(ArgumentError):
        net.forward(np.zeros(shape, dtype=np.float32))


def test_invalid_configs():
    with pytest.raises(ConfigError):
        NetworkConfig(shortcut="add")
    with pytest.raises(ConfigError):
        NetworkConfig(dilations=((1, 2), (1, 2, 5), (2, 5, 9)))
    with pytest.raises(ConfigError):
        NetworkConfig(num_classes=1)


def test_ablation_wiring():
    full = build(NetworkConfig(), seed=0)
    no_stb = build(NetworkConfig(enable_stb=False), seed=0)
    assert all(isinstance(b, STB) for b in full.stage4)
    assert all(isinstance(b, SpikeLD) for b in no_stb.stage4)
    names = {r.name for r in layer_graph(full, (32, 32)).records}
    assert any(n.startswith("fe2.") for n in names)
    no_fusion = build(NetworkConfig(enable_skip_fusion=False), seed=0)
    names = {r.name for r in layer_graph(no_fusion, (32, 32)).records}
    assert not any(n.startswith("fe") for n in names)
    no_fe = build(NetworkConfig(enable_fe=False), seed=0)
    names = {r.name for r in layer_graph(no_fe, (32, 32)).records}
    assert not any(".ca." in n for n in names if n.startswith("fe"))
    for cfg in [NetworkConfig(shortcut=s) for s in ("vs", "sew")] + [NetworkConfig(enable_fe=False)]:
        out = build(cfg, seed=0).eval().forward(np.zeros((1, 5, 16, 16), dtype=np.float32))
        assert out.p1.shape == (1, 6, 16, 16)


def test_fold_matches_unfolded():
    net = build(NetworkConfig(), seed=4)
    x = (np.random.default_rng(2).random((2, 5, 32, 32)) < 0.15).astype(np.float32)
    net.forward(x, mode="train")  # populate running statistics
    net.eval()
    ref = net.forward(x).p1.data
    net.fold()
    folded = net.forward(x).p1.data
    assert np.max(np.abs(folded - ref)) <= 1e-4 * max(1.0, np.max(np.abs(ref)))
