"""Command-line entry point: ``sltnet <subcommand> ...``.

Exit status: 0 success, 1 usage or validation error, 2 runtime error.
SLTNET_THREADS caps the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .autodiff import write_tensor
from .checkpoint import TrainState, load_checkpoint, new_state
from .energy import benchmark_fps, count_ops, estimate_energy, estimate_energy_measured, measure_rates
from .errors import ArgumentError, FormatError, SltnetError, ValidationError
from .events import atomic_write, read_events, to_event_tensor, voxelize
from .network import layer_graph, trace
from .synth import synth_dataset, write_dataset
from .train import evaluate, load_splits, train, voxelize_pairs

log = logging.getLogger("sltnet")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError(f"size must be positive, got {text!r}")
    return h, w


def _emit(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        atomic_write(path, text.encode())
    else:
        sys.stdout.write(text)


def _run_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    cfg = config_mod.resolve(pairs, cfg)
    for ab in args.ablation or []:
        cfg = config_mod.resolve(config_mod.ablation_pairs(ab, cfg), cfg)
    return cfg


def _state_from(args) -> TrainState:
    if getattr(args, "checkpoint", None):
        return load_checkpoint(args.checkpoint)
    if getattr(args, "config", None):
        return new_state(config_mod.load(args.config), args.seed)
    raise UsageError("need --checkpoint or --config")


# subcommands ---------------------------------------------------------------------

def cmd_voxelize(args) -> int:
    grid = voxelize(read_events(args.input), args.dt_us, args.bins)
    et = to_event_tensor(grid, args.time_steps)
    with open(args.out + ".tmp", "wb") as f:
        write_tensor(f, et.values)
    os.replace(args.out + ".tmp", args.out)
    log.info("wrote %s with shape %s", args.out, et.values.shape)
    return 0


def cmd_synth(args) -> int:
    h, w = parse_size(args.size)
    pairs = synth_dataset(args.seed, args.samples, args.classes, h, w, args.dt_us, args.bins)
    write_dataset(args.out, pairs, {"seed": args.seed, "classes": args.classes, "height": h, "width": w,
                                    "dt_us": args.dt_us, "bins": args.bins})
    log.info("wrote %d samples to %s", len(pairs), args.out)
    return 0


def cmd_train(args) -> int:
    if args.resume:
        state = load_checkpoint(args.resume)
        if args.config or args.set or args.ablation:
            raise UsageError("--resume uses the checkpoint's config; drop --config/--set/--ablation")
    else:
        state = new_state(_run_config(args), args.seed)
    cfg = state.config
    sys.stderr.write(f"# resolved config (digest {cfg.digest()})\n{cfg.to_text()}")
    tr, va = load_splits(args.data, cfg)
    records = train(state, tr, va, args.out, max_epochs=args.epochs)
    if records:
        log.info("finished at epoch %d, last val mIoU %s", state.epoch, records[-1]["val_mIoU"])
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = state.config
    if args.split == "all":
        from .synth import load_dataset
        data = voxelize_pairs(load_dataset(args.data)[1], cfg.data.dt_us, cfg.data.bins)
    else:
        data = load_splits(args.data, cfg)[1]
        if data is None:
            raise ValidationError("dataset has no validation split; use --split all")
    cm, iou, mean = evaluate(state.net, data, cfg.train.eval_batch, cfg.loss.ignore_id)
    report = {"config_digest": cfg.digest(), "epoch": state.epoch, "pixels": cm.total, "mIoU": mean,
              "per_class_IoU": [None if np.isnan(v) else float(v) for v in iou],
              "confusion": cm.counts.tolist()}
    _emit(report, args.json)
    width = max(5, len(str(len(iou) - 1)))
    lines = [f"{'class':>{width}}  {'IoU':>7}"]
    lines += [f"{c:>{width}}  {'-' if np.isnan(v) else f'{v:7.4f}':>7}" for c, v in enumerate(iou)]
    lines.append(f"{'mean':>{width}}  {mean:7.4f}")
    (sys.stderr if args.json is None else sys.stdout).write("\n".join(lines) + "\n")
    return 0


def cmd_profile(args) -> int:
    h, w = parse_size(args.size)
    state = _state_from(args)
    net, cfg = state.net, state.config
    net.eval()
    net.fold()
    graph = layer_graph(net)
    counts = count_ops(graph, (h, w))
    fixed = estimate_energy(counts, cfg.neuron.time_steps, args.rate)
    report = {"config_digest": cfg.digest(), "size": [h, w], "params": net.num_parameters(),
              "FL1_MAC": counts.fl1, "FL2_ACC": counts.fl2, "FL_total": counts.fl1 + counts.fl2,
              "time_steps": cfg.neuron.time_steps, "rate": args.rate, "energy_mJ": fixed.energy_mj,
              "layers": [dict(name=l.name, kind=l.kind, domain=l.domain, ops=l.ops, counted=l.counted)
                         for l in counts.layers]}
    if args.measured_rates:
        if args.data:
            from .synth import load_dataset
            pairs = load_dataset(args.data)[1][:args.samples]
            x = voxelize_pairs(pairs, cfg.data.dt_us, cfg.data.bins).x
        else:
            pairs = synth_dataset(args.seed, args.samples, max(cfg.net.num_classes, 2), h, w,
                                  cfg.data.dt_us, cfg.data.bins)
            x = voxelize_pairs(pairs, cfg.data.dt_us, cfg.data.bins).x
        if x.shape[2:] != (h, w):
            raise ValidationError(f"data size {x.shape[2:]} differs from --size {h}x{w}")
        tr, out = trace(net, x)
        measured_counts = count_ops(type(graph)(tr.records, (h, w)), (h, w))
        measured = estimate_energy_measured(measured_counts, cfg.neuron.time_steps)
        report["measured"] = {"energy_mJ": measured.energy_mj, "mean_rate": measured.rate,
                              "layer_input_rates": measured.layer_rates,
                              "neuron_rates": measure_rates(out.rates)}
    _emit(report, args.json)
    return 0


def cmd_bench(args) -> int:
    size = parse_size(args.size)
    state = _state_from(args)
    report = benchmark_fps(state.net, size, args.warmup, args.iters, args.batch)
    _emit(report, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sltnet", description="Spiking event-camera segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("voxelize", help="EVS1 event file -> TNS1 event tensor")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dt-us", type=int, default=50_000)
    s.add_argument("--bins", type=int, default=5)
    s.add_argument("--time-steps", type=int, default=1)
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("synth-data", help="generate the synthetic moving-shapes dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--size", default="64x64")
    s.add_argument("--dt-us", type=int, default=50_000)
    s.add_argument("--bins", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a network")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="runs/latest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--ablation", action="append",
                   help="no-stb, no-fe, no-fusion, no-early-loss, no-ohem, no-evaf, shortcut=KIND, k=VALUE")
    s.add_argument("--resume", metavar="CHECKPOINT")
    s.add_argument("--epochs", type=int, help="run at most this many epochs in this call")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-class IoU of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", choices=("val", "all"), default="val")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    for name, fn, text in (("profile", cmd_profile, "operation counts and energy estimate"),
                           ("bench", cmd_bench, "forward-pass throughput")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--checkpoint")
        s.add_argument("--config")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--size", required=True)
        s.add_argument("--json")
        if name == "profile":
            s.add_argument("--measured-rates", action="store_true")
            s.add_argument("--data")
            s.add_argument("--samples", type=int, default=4)
            s.add_argument("--rate", type=float, default=0.5)
        else:
            s.add_argument("--warmup", type=int, default=2)
            s.add_argument("--iters", type=int, default=10)
            s.add_argument("--batch", type=int, default=1)
        s.set_defaults(func=fn)
    return p


def _thread_limit():
    n = os.environ.get("SLTNET_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError:
        raise UsageError(f"SLTNET_THREADS must be an integer, got {n!r}") from None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        with _thread_limit():
            return args.func(args)
    except (UsageError, ValueError, FormatError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except (SltnetError, RuntimeError, OSError) as e:
        sys.stderr.write(f"runtime error: {e}\n")
        return 2
    except KeyboardInterrupt:
        sys.stderr.write("interrupted\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
