"""Dataset preparation, the epoch loop, and evaluation."""
from __future__ import annotations

import json
import logging
import math
import signal
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .checkpoint import TrainState, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, SltnetError, ValidationError
from .events import check_labels, voxelize
from .loss import total_loss
from .metrics import ConfusionMatrix, miou
from .optim import step_lr
from .synth import load_dataset

log = logging.getLogger(__name__)


class TrainingAborted(SltnetError, RuntimeError):
    pass


@dataclass
class Split:
    x: np.ndarray  # (N, K, H, W) float32 voxel grids
    y: np.ndarray  # (N, H, W) uint8 labels

    def __len__(self) -> int:
        return len(self.x)


def voxelize_pairs(pairs, dt_us: int, bins: int) -> Split:
    if not pairs:
        raise ValidationError("dataset is empty")
    xs = np.stack([voxelize(s, dt_us, bins).values for s, _ in pairs])
    ys = np.stack([lab for _, lab in pairs]).astype(np.uint8)
    return Split(xs, ys)


def split_train_val(data: Split, val_fraction: float) -> tuple[Split, Split | None]:
    """The last round(N * val_fraction) samples form the validation split."""
    n_val = int(round(len(data) * val_fraction))
    if n_val == 0:
        return data, None
    if n_val >= len(data):
        raise ValidationError("validation split would leave no training samples")
    cut = len(data) - n_val
    return Split(data.x[:cut], data.y[:cut]), Split(data.x[cut:], data.y[cut:])


def load_splits(root, cfg: RunConfig) -> tuple[Split, Split | None]:
    _, pairs = load_dataset(root)
    data = voxelize_pairs(pairs, cfg.data.dt_us, cfg.data.bins)
    check_labels(data.y, cfg.net.num_classes, cfg.loss.ignore_id)
    return split_train_val(data, cfg.data.val_fraction)


def check_compatible(cfg: RunConfig, data: Split) -> None:
    if cfg.net.in_bins != data.x.shape[1]:
        raise ConfigError(f"net.in_bins = {cfg.net.in_bins} but data has {data.x.shape[1]} bins")


def predict(net, x: np.ndarray, batch: int = 32) -> np.ndarray:
    """Eval-mode argmax of P1, shape (N, H, W)."""
    net.eval()
    out = []
    for i in range(0, len(x), batch):
        out.append(np.argmax(net.forward(x[i:i + batch]).p1.data, axis=1).astype(np.uint8))
    return np.concatenate(out)


def evaluate(net, data: Split, batch: int = 32, ignore_id: int = 255) -> tuple[ConfusionMatrix, np.ndarray, float]:
    cm = ConfusionMatrix(net.cfg.num_classes)
    cm.update(predict(net, data.x, batch), data.y, ignore_id)
    iou, mean = miou(cm)
    return cm, iou, mean


class _StopFlag:
    """SIGINT sets a flag so the loop can finish its batch and checkpoint."""

    def __init__(self):
        self.hit = False
        self._old = None

    def __enter__(self):
        if threading.current_thread() is threading.main_thread():
            self._old = signal.signal(signal.SIGINT, self._handle)
        return self

    def _handle(self, *_):
        if self.hit:
            raise KeyboardInterrupt
        self.hit = True

    def __exit__(self, *exc):
        if self._old is not None:
            signal.signal(signal.SIGINT, self._old)


def train_epoch(state: TrainState, data: Split, stop: _StopFlag | None = None) -> float:
    cfg = state.config
    net = state.net
    net.train()
    lr = step_lr(state.epoch, cfg.optim)
    perm = state.rng.permutation(len(data))
    bs = cfg.optim.batch
    total, seen = 0.0, 0
    for i in range(0, len(perm), bs):
        idx = np.sort(perm[i:i + bs])
        x, y = data.x[idx], data.y[idx]
        if cfg.data.hflip:
            flip = state.rng.random(len(idx)) < 0.5
            x = np.where(flip[:, None, None, None], x[..., ::-1], x)
            y = np.where(flip[:, None, None], y[..., ::-1], y)
        net.zero_grad()
        with Tape() as tape:
            out = net.forward(x, mode="train")
            loss, _ = total_loss(out.p1, out.p2, y, cfg.loss)
        if not math.isfinite(float(loss.data)):
            raise TrainingAborted(f"non-finite loss at epoch {state.epoch}, batch {i // bs}")
        tape.backward(loss)
        state.optimizer.step(lr)
        total += float(loss.data) * len(idx)
        seen += len(idx)
        if stop is not None and stop.hit:
            break
    return total / max(seen, 1)


def train(state: TrainState, train_data: Split, val_data: Split | None, out_dir,
          max_epochs: int | None = None) -> list[dict]:
    """Run epochs until the configured count, the mIoU target, the time budget or Ctrl-C.

    Appends one JSON record per epoch to ``metrics.jsonl`` and rewrites
    ``last.slt`` after every epoch. Returns the records of this call.
    """
    cfg = state.config
    check_compatible(cfg, train_data)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    (out / "resolved.cfg").write_text(f"# config digest {digest}\n" + cfg.to_text())
    metrics_path = out / "metrics.jsonl"
    records = []
    t_start = time.perf_counter()
    end = cfg.optim.epochs if max_epochs is None else min(cfg.optim.epochs, state.epoch + max_epochs)
    with _StopFlag() as stop:
        while state.epoch < end:
            k = state.surrogate_k()
            state.net.set_surrogate_k(k)
            lr = step_lr(state.epoch, cfg.optim)
            t0 = time.perf_counter()
            try:
                train_loss = train_epoch(state, train_data, stop)
            except TrainingAborted as e:
                rec = {"epoch": state.epoch, "error": str(e), "config_digest": digest}
                with open(metrics_path, "a") as f:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
                raise
            val = None
            if val_data is not None:
                _, _, val = evaluate(state.net, val_data, cfg.train.eval_batch, cfg.loss.ignore_id)
            state.epoch += 1
            save_checkpoint(state, out / "last.slt")
            rec = {"epoch": state.epoch - 1, "lr": lr, "K": k, "train_loss": train_loss,
                   "val_mIoU": val, "config_digest": digest}
            records.append(rec)
            with open(metrics_path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("epoch %d loss %.4f val mIoU %s (%.1fs)", rec["epoch"], train_loss,
                     "n/a" if val is None else f"{val:.4f}", time.perf_counter() - t0)
            if stop.hit:
                log.warning("interrupted; checkpoint written after epoch %d", rec["epoch"])
                break
            if cfg.train.target_miou and val is not None and val >= cfg.train.target_miou:
                break
            if cfg.train.max_minutes and time.perf_counter() - t_start > 60 * cfg.train.max_minutes:
                log.warning("time budget of %.1f min reached", cfg.train.max_minutes)
                break
    return records
