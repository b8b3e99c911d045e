"""Run the ablation variants on the synthetic shapes data and tabulate best val mIoU.

    python3 scripts/ablations.py --data DIR --out runs/ablations [--epochs 10] [--only no-stb ...]

Each variant trains from the same seed with the synth-small config plus one override.
"""
import argparse
import json
import logging
from pathlib import Path

from sltnet import config
from sltnet.checkpoint import new_state
from sltnet.train import load_splits, train

ROOT = Path(__file__).resolve().parent.parent
VARIANTS = ["baseline", "no-stb", "no-fe", "no-fusion", "no-early-loss", "no-ohem", "no-evaf",
            "shortcut=sew", "shortcut=vs"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "synth-small.cfg"))
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--only", nargs="*")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = config.load(args.config)
    base = config.resolve([("train.target_miou", "0")], base)
    tr, va = load_splits(args.data, base)
    results = {}
    for name in args.only or VARIANTS:
        cfg = base if name == "baseline" else config.resolve(config.ablation_pairs(name, base), base)
        records = train(new_state(cfg, 0), tr, va, Path(args.out) / name, max_epochs=args.epochs)
        results[name] = max(r["val_mIoU"] for r in records)
        print(f"{name:<16} best val mIoU {results[name]:.4f}", flush=True)
    (Path(args.out) / "summary.json").write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
