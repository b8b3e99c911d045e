import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sltnet import config as cfgmod
from sltnet.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, new_state, save_checkpoint
from sltnet.errors import ConfigError, CorruptionError, FormatError

TINY = """
net.base_channels = 8
net.num_classes = 3
net.encoder_bottleneck = 2
net.decoder_bottleneck = 2
net.ca_reduction = 2
net.decoder_channels = 8,8,8
optim.epochs = 10
"""


def tiny_cfg(extra=""):
    return cfgmod.loads(TINY + extra)


def test_defaults_round_trip_through_text():
    cfg = cfgmod.RunConfig()
    assert cfgmod.loads(cfg.to_text()) == cfg
    assert cfgmod.loads(cfg.to_text()).digest() == cfg.digest()


@settings(max_examples=25, deadline=None)
@given(lr=st.floats(1e-6, 1.0), k=st.floats(0.05, 1.0), sc=st.sampled_from(["ms", "vs", "sew"]),
       flip=st.booleans())
def test_round_trip_property(lr, k, sc, flip):
    cfg = cfgmod.resolve([("optim.lr", repr(lr)), ("loss.ohem_k", repr(k)), ("net.shortcut", sc),
                          ("data.hflip", str(flip).lower())])
    assert cfgmod.loads(cfg.to_text()) == cfg


def test_comments_and_tuples():
    cfg = cfgmod.loads("net.dilations = 1,2,3; 1,2,3; 2,4,8  # wide\n# full line\n")
    assert cfg.net.dilations == ((1, 2, 3), (1, 2, 3), (2, 4, 8))


@pytest.mark.parametrize("text", [
    "net.nonsense = 3", "bogus.lr = 1", "optim.lr = fast", "net.enable_stb = maybe", "just words",
    "loss.ohem_k = 0", "optim.lr = -1", "net.shortcut = add",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        cfgmod.loads(text)


def test_ablations_map_to_keys():
    cfg = cfgmod.RunConfig()
    assert cfgmod.ablation_pairs("no-stb", cfg) == [("net.enable_stb", "false")]
    assert cfgmod.ablation_pairs("k=1.0", cfg) == [("loss.ohem_k", "1.0")]
    assert cfgmod.ablation_pairs("shortcut=sew", cfg) == [("net.shortcut", "sew")]
    fixed = cfgmod.resolve(cfgmod.ablation_pairs("no-evaf", cfg))
    assert fixed.neuron.k_max == fixed.neuron.k_min
    with pytest.raises(ConfigError):
        cfgmod.ablation_pairs("no-such", cfg)
    with pytest.raises(ConfigError):
        cfgmod.ablation_pairs("depth=3", cfg)


def test_digest_changes_with_any_value():
    a = cfgmod.RunConfig()
    b = cfgmod.resolve([("optim.weight_decay", "0.0002")])
    assert a.digest() != b.digest()


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    state = new_state(tiny_cfg(), seed=3)
    state.epoch = 4
    state.optimizer.t = 17
    state.rng.random(5)
    for name, _ in state.optimizer.params:
        state.optimizer.m[name][...] = 0.25
    save_checkpoint(state, tmp_path / "a.slt")
    loaded = load_checkpoint(tmp_path / "a.slt")
    save_checkpoint(loaded, tmp_path / "b.slt")
    assert (tmp_path / "a.slt").read_bytes() == (tmp_path / "b.slt").read_bytes()
    assert loaded.epoch == 4 and loaded.optimizer.t == 17
    assert loaded.rng.random() == state.rng.random()
    assert loaded.surrogate_k() == state.surrogate_k()


def test_same_seed_same_bytes():
    assert encode_checkpoint(new_state(tiny_cfg(), 9)) == encode_checkpoint(new_state(tiny_cfg(), 9))
    assert encode_checkpoint(new_state(tiny_cfg(), 9)) != encode_checkpoint(new_state(tiny_cfg(), 10))


def test_loaded_network_reproduces_outputs():
    state = new_state(tiny_cfg(), 1)
    x = (np.random.default_rng(0).random((1, 5, 16, 16)) < 0.2).astype(np.float32)
    state.net.eval()
    ref = state.net.forward(x).p1.data
    loaded = decode_checkpoint(encode_checkpoint(state))
    loaded.net.eval()
    np.testing.assert_array_equal(loaded.net.forward(x).p1.data, ref)


def test_version_and_magic_mismatch():
    buf = bytearray(encode_checkpoint(new_state(tiny_cfg(), 0)))
    bad_version = bytes(buf[:4]) + struct.pack("<H", 2) + bytes(buf[6:])
    with pytest.raises(FormatError, match="version"):
        decode_checkpoint(bad_version)
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + bytes(buf[4:]))


def test_corruption_detected():
    buf = encode_checkpoint(new_state(tiny_cfg(), 0))
    with pytest.raises(CorruptionError):
        decode_checkpoint(buf[: len(buf) // 2])
    flipped = bytearray(buf)
    flipped[50] ^= 0xFF  # inside the config text
    with pytest.raises(CorruptionError):
        decode_checkpoint(bytes(flipped))
    with pytest.raises(CorruptionError):
        decode_checkpoint(buf + b"\0")


def test_surrogate_k_follows_epoch_on_resume():
    state = new_state(tiny_cfg(), 0)
    state.epoch = 7
    loaded = decode_checkpoint(encode_checkpoint(state))
    expected = state.surrogate_k(7)
    assert loaded.net.surrogate.k == expected
    assert all(n.surrogate is loaded.net.surrogate for n in loaded.net.neurons())
