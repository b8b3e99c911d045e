import json
import subprocess
import sys

import numpy as np
import pytest

from sltnet.autodiff import read_tensor
from sltnet.checkpoint import load_checkpoint
from sltnet.cli import main
from sltnet.events import EventStream, write_events


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "synth"
    assert main(["synth-data", "--samples", "8", "--classes", "3", "--size", "32x32", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def run(tmp_path_factory, dataset):
    d = tmp_path_factory.mktemp("cfg")
    cfg = d / "tiny.cfg"
    from conftest import TINY_TEXT
    cfg.write_text(TINY_TEXT)
    out = d / "run"
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out), "--epochs", "1"]) == 0
    return cfg, out


def test_train_writes_metrics_and_checkpoint(run):
    _, out = run
    rec = json.loads((out / "metrics.jsonl").read_text().splitlines()[0])
    assert rec["epoch"] == 0
    assert load_checkpoint(out / "last.slt").epoch == 1


def test_resume_continues(run, dataset, tmp_path):
    _, out = run
    ck = tmp_path / "copy.slt"
    ck.write_bytes((out / "last.slt").read_bytes())
    assert main(["train", "--resume", str(ck), "--data", str(dataset), "--out", str(tmp_path), "--epochs", "1"]) == 0
    assert load_checkpoint(tmp_path / "last.slt").epoch == 2


def test_eval_json(run, dataset, tmp_path):
    _, out = run
    path = tmp_path / "eval.json"
    assert main(["eval", "--checkpoint", str(out / "last.slt"), "--data", str(dataset), "--json", str(path)]) == 0
    rep = json.loads(path.read_text())
    assert rep["pixels"] == 2 * 32 * 32 and len(rep["per_class_IoU"]) == 3


def test_profile_fixed_and_measured(run, tmp_path, capsys):
    _, out = run
    assert main(["profile", "--checkpoint", str(out / "last.slt"), "--size", "64x64"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["FL_total"] == rep["FL1_MAC"] + rep["FL2_ACC"] > 0
    assert rep["energy_mJ"] == pytest.approx((4.6 * rep["FL1_MAC"] + 0.9 * rep["FL2_ACC"] * 0.5) * 1e-9)
    assert main(["profile", "--checkpoint", str(out / "last.slt"), "--size", "32x32", "--measured-rates",
                 "--samples", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0.0 <= rep["measured"]["mean_rate"] <= 1.0


def test_ablation_is_echoed(dataset, tmp_path, capsys):
    from conftest import TINY_TEXT
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY_TEXT)
    code = main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "r"),
                 "--epochs", "1", "--ablation", "no-stb", "--ablation", "k=1.0"])
    assert code == 0
    err = capsys.readouterr().err
    assert "net.enable_stb = false" in err and "loss.ohem_k = 1.0" in err


def test_voxelize(tmp_path):
    ev = tmp_path / "e.evs"
    stream = EventStream(4, 3, np.array([0, 1, 2]), np.array([0, 0, 1]), np.array([0, 10, 20]),
                         np.array([1, -1, 1]))
    write_events(stream, ev)
    out = tmp_path / "e.tns"
    assert main(["voxelize", "--input", str(ev), "--out", str(out), "--dt-us", "30", "--bins", "3"]) == 0
    with open(out, "rb") as f:
        arr = read_tensor(f)
    assert arr.shape == (1, 3, 3, 4)


@pytest.mark.parametrize("argv,code", [
    (["profile", "--size", "64x64"], 1),
    (["profile", "--size", "64by64", "--config", "nope.cfg"], 1),
    (["frobnicate"], 1),
    (["eval", "--checkpoint", "/nonexistent.slt", "--data", "/nonexistent"], 2),
])
def test_exit_codes(argv, code):
    assert main(argv) == code


def test_bad_checkpoint_is_format_error(tmp_path, dataset):
    bad = tmp_path / "bad.slt"
    bad.write_bytes(b"JUNKJUNK")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(dataset)]) == 1


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("net.base_channels = 8\nnet.encoder_bottleneck = 2\nnet.decoder_bottleneck = 2\n"
                   "net.ca_reduction = 2\nnet.decoder_channels = 8,8,8\n")
    res = subprocess.run([sys.executable, "-m", "sltnet", "bench", "--config", str(cfg), "--size", "32x32",
                          "--iters", "1", "--warmup", "0"], capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["fps"] > 0
