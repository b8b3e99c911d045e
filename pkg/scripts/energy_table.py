"""Energy estimates: the published MAC/ACC rows, then this network's own counts.

    python3 scripts/energy_table.py [--size 200x344] [--config configs/ddd17-small.cfg]
"""
import argparse
from pathlib import Path

from sltnet import config
from sltnet.energy import count_ops, estimate_energy
from sltnet.network import build, layer_graph

ROOT = Path(__file__).resolve().parent.parent

PUBLISHED = [  # name, MAC, ACC, reported mJ
    ("SLTNet", 131e6, 1830e6, 1.42),
    ("Spiking-DeepLab", 1435e6, 2617e6, 7.78),
    ("Spiking-FCN", 264e6, 35176e6, 17.04),
    ("Ev-SegNet", 9322e6, 0, 42.88),
    ("Evdistill", 29730e6, 0, 136.76),
    ("ESS", 11700e6, 0, 53.82),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "ddd17-small.cfg"))
    ap.add_argument("--size", default="200x344")
    ap.add_argument("--rate", type=float, default=0.5)
    args = ap.parse_args()

    print(f"{'model':<18}{'MAC (M)':>10}{'ACC (M)':>10}{'E (mJ)':>9}{'reported':>10}")
    for name, mac, acc, mj in PUBLISHED:
        e = estimate_energy((mac, acc), 1, args.rate).energy_mj
        print(f"{name:<18}{mac / 1e6:>10.0f}{acc / 1e6:>10.0f}{e:>9.2f}{mj:>10.2f}")

    cfg = config.load(args.config)
    h, w = (int(v) for v in args.size.split("x"))
    net = build(cfg.net, seed=0, neuron=cfg.neuron).eval()
    net.fold()
    counts = count_ops(layer_graph(net), (h, w))
    e = estimate_energy(counts, cfg.neuron.time_steps, args.rate).energy_mj
    print(f"{'this build':<18}{counts.fl1 / 1e6:>10.0f}{counts.fl2 / 1e6:>10.0f}{e:>9.2f}{'':>10}"
          f"   ({net.num_parameters() / 1e6:.3f}M params, {h}x{w})")
    skipped = {}
    for layer in counts.itemized():
        skipped[layer.kind] = skipped.get(layer.kind, 0) + layer.ops
    print("itemized, not in totals: " + ", ".join(f"{k} {v / 1e6:.1f}M" for k, v in sorted(skipped.items())))


if __name__ == "__main__":
    main()
