import json

import numpy as np
import pytest

from sltnet import config as cfgmod
from sltnet.checkpoint import load_checkpoint, new_state
from sltnet.train import TrainingAborted, evaluate, split_train_val, train, train_epoch


def test_one_epoch_writes_one_record(tmp_path, tiny_cfg, tiny_data):
    state = new_state(tiny_cfg, 0)
    records = train(state, tiny_data, tiny_data, tmp_path, max_epochs=1)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(records) == 1 and len(lines) == 1
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "lr", "K", "train_loss", "val_mIoU", "config_digest"}
    assert rec["epoch"] == 0 and rec["config_digest"] == tiny_cfg.digest()
    assert np.isfinite(rec["train_loss"]) and 0.0 <= rec["val_mIoU"] <= 1.0
    assert load_checkpoint(tmp_path / "last.slt").epoch == 1
    assert (tmp_path / "resolved.cfg").read_text().startswith("# config digest ")


def test_training_is_deterministic(tmp_path, tiny_cfg, tiny_data):
    for name in ("a", "b"):
        train(new_state(tiny_cfg, 7), tiny_data, None, tmp_path / name, max_epochs=2)
    assert (tmp_path / "a" / "last.slt").read_bytes() == (tmp_path / "b" / "last.slt").read_bytes()


def test_resume_equals_uninterrupted(tmp_path, tiny_cfg, tiny_data):
    train(new_state(tiny_cfg, 1), tiny_data, None, tmp_path / "full", max_epochs=2)
    train(new_state(tiny_cfg, 1), tiny_data, None, tmp_path / "part", max_epochs=1)
    resumed = load_checkpoint(tmp_path / "part" / "last.slt")
    train(resumed, tiny_data, None, tmp_path / "part", max_epochs=1)
    assert (tmp_path / "full" / "last.slt").read_bytes() == (tmp_path / "part" / "last.slt").read_bytes()


def test_overfit_loss_mostly_decreases(tiny_cfg, tiny_data):
    # full-batch steps on the 8 samples
    cfg = cfgmod.resolve([("optim.batch", "8"), ("optim.lr", "0.002")], tiny_cfg)
    state = new_state(cfg, 0)
    losses = []
    for _ in range(30):
        state.net.set_surrogate_k(state.surrogate_k())
        losses.append(train_epoch(state, tiny_data))
        state.epoch += 1
    violations = sum(b > a for a, b in zip(losses, losses[1:]))
    assert violations <= 3, losses
    assert losses[-1] < 0.9 * losses[0]


def test_non_finite_loss_aborts(tiny_cfg, tiny_data):
    state = new_state(tiny_cfg, 0)
    state.net.head1.cls.bias.data[0] = np.nan
    with pytest.raises(TrainingAborted):
        train_epoch(state, tiny_data)


def test_target_stops_early(tmp_path, tiny_data):
    cfg = cfgmod.loads("net.base_channels = 8\nnet.num_classes = 3\nnet.encoder_bottleneck = 2\n"
                       "net.decoder_bottleneck = 2\nnet.ca_reduction = 2\nnet.decoder_channels = 8,8,8\n"
                       "optim.batch = 4\ntrain.target_miou = 0.000001\n")
    records = train(new_state(cfg, 0), tiny_data, tiny_data, tmp_path, max_epochs=5)
    assert len(records) == 1


def test_split_and_evaluate(tiny_cfg, tiny_data):
    tr, va = split_train_val(tiny_data, 0.25)
    assert len(tr) == 6 and len(va) == 2
    np.testing.assert_array_equal(va.x, tiny_data.x[6:])
    assert split_train_val(tiny_data, 0.0)[1] is None
    cm, iou, mean = evaluate(new_state(tiny_cfg, 0).net, va)
    assert cm.total == 2 * 32 * 32 and len(iou) == 3 and 0.0 <= mean <= 1.0
