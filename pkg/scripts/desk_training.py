"""Train the ddd17-small network on the synthetic 4-class shapes data and report val mIoU.

    python3 scripts/desk_training.py --out runs/desk [--data DIR] [--config configs/synth-small.cfg]

Generates the 1000-sample 64x64 dataset (seed 0) when --data is not given.
"""
import argparse
import logging
import tempfile
import time
from pathlib import Path

from sltnet import config
from sltnet.checkpoint import new_state
from sltnet.synth import synth_dataset, write_dataset
from sltnet.train import load_splits, train

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synth-small.cfg"))
    ap.add_argument("--data")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = config.load(args.config)
    with tempfile.TemporaryDirectory() as tmp:
        data = args.data
        if data is None:
            data = Path(tmp) / "synth4"
            pairs = synth_dataset(0, 1000, cfg.net.num_classes, 64, 64, cfg.data.dt_us, cfg.data.bins)
            write_dataset(data, pairs, {"seed": 0, "classes": cfg.net.num_classes, "height": 64, "width": 64,
                                        "dt_us": cfg.data.dt_us, "bins": cfg.data.bins})
        tr, va = load_splits(data, cfg)
    t0 = time.perf_counter()
    records = train(new_state(cfg, args.seed), tr, va, args.out)
    best = max(records, key=lambda r: r["val_mIoU"])
    print(f"{len(records)} epochs in {(time.perf_counter() - t0) / 60:.1f} min; "
          f"best val mIoU {best['val_mIoU']:.4f} at epoch {best['epoch']}")


if __name__ == "__main__":
    main()
