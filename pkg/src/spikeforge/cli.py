"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointMismatch, load_network, save_network
from .data import DatasetSplit, load_cifar10_bin, load_idx, normalize
from .errors import FormatError, SpecError
from .network import build_network, encode_input
from .neurons import NeuronConfig, mpr, run_sequence
from .report import (DEFAULT_RANGE, accumulate_activations, avg_quant_error, build_report,
                     emit_report, membrane_histogram)
from .train import cross_entropy, fit

log = logging.getLogger("spikeforge")


class UsageError(Exception):
    """Maps to exit code 2."""


def _print_config(resolved: dict) -> None:
    print(json.dumps(resolved, indent=2, sort_keys=True))
    sys.stdout.flush()


def _out_dir(default: str) -> Path:
    out = Path(os.environ.get("SPIKEFORGE_OUT") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_splits(resolved: dict) -> tuple[DatasetSplit, DatasetSplit]:
    ds = resolved["dataset"]
    p = ds["paths"]
    try:
        if ds["name"] == "mnist":
            train = load_idx(p["train_images"], p["train_labels"], "train")
            test = load_idx(p["test_images"], p["test_labels"], "test")
        else:
            train = load_cifar10_bin(p["train"], "train")
            test = load_cifar10_bin(p["test"], "test")
    except FormatError as e:
        raise UsageError(f"dataset: {e}") from None
    train = normalize(train)
    test = normalize(test, (train.norm_mean, train.norm_std))
    return train, test


def _build(resolved: dict, input_shape):
    try:
        return build_network(cfgmod.network_spec(resolved, input_shape), dtype=np.float32)
    except SpecError as e:
        raise UsageError(f"model: {e}") from None


def cmd_train(args) -> int:
    resolved = cfgmod.load_config(args.config)
    _print_config(resolved)
    out = _out_dir(resolved["report"]["out_dir"])
    train, test = _load_splits(resolved)
    net = _build(resolved, train.images.shape[1:])
    tcfg = cfgmod.train_config(resolved)
    history, opt = fit(net, train, tcfg, test, out / "metrics.csv")
    save_network(out / "checkpoint.spkf", net, opt.velocity)
    with open(out / "resolved_config.json", "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")
    final = history[-1]
    print(f"final train_acc {final.acc:.4f} test_acc {final.test_acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    resolved = cfgmod.load_config(args.config)
    _print_config(resolved)
    out = _out_dir(resolved["report"]["out_dir"])
    train, test = _load_splits(resolved)
    net = _build(resolved, train.images.shape[1:])
    try:
        load_network(args.checkpoint, net)
    except (FormatError, CheckpointMismatch) as e:
        raise UsageError(f"checkpoint {args.checkpoint}: {e}") from None
    except OSError as e:
        raise UsageError(f"checkpoint {args.checkpoint}: {e.strerror}") from None
    if any(l.kind == "tdbn" and not l.bn.stats_ready for l in net.layers):
        raise UsageError(f"checkpoint {args.checkpoint} has no tdBN running statistics")

    bins = resolved["report"]["bins"]
    accs, correct, loss_sum = {}, 0, 0.0
    for start in range(0, len(test), 512):
        x = test.images[start:start + 512]
        y = test.labels[start:start + 512]
        logits, acts = net.forward_temporal(encode_input(x, net.T), training=False)
        accumulate_activations(acts, accs, bins)
        correct += int((logits.data.argmax(axis=1) == y).sum())
        loss_sum += float(cross_entropy(logits, y).data) * len(y)
    report = build_report(accs, correct / len(test), loss_sum / len(test))
    run_id = Path(args.checkpoint).stem
    emit_report(report, out / f"report_{run_id}.csv", "csv")
    emit_report(report, out / f"report_{run_id}.json", "json")
    print(f"accuracy {report.accuracy:.6g}")
    for lr in report.layers:
        print(f"{lr.layer}: avg error before {lr.err_before:.4f} after {lr.err_after:.4f} "
              f"spike rate {lr.spike_rate:.4f}")
    return 0


def cmd_trace(args) -> int:
    cfg = NeuronConfig(kind=args.neuron, v_th=args.v_th, tau=args.tau, use_mpr=args.mpr)
    print(json.dumps({"neuron": {"kind": cfg.kind.value, "v_th": cfg.v_th, "tau": cfg.tau,
                                 "use_mpr": cfg.use_mpr}, "inputs": args.values}, sort_keys=True))
    records = run_sequence(args.values, cfg)
    print(f"{'t':>3} {'X':>9} {'H':>9} {'H_hat':>9} {'O':>2} {'U':>9}")
    for t, (x, rec) in enumerate(zip(args.values, records)):
        print(f"{t:>3} {x:>9.4f} {float(rec.h.data):>9.4f} {float(rec.h_hat.data):>9.4f} "
              f"{int(rec.o.data):>2d} {float(rec.u.data):>9.4f}")
    print(f"spikes {sum(int(r.o.data) for r in records)}")
    return 0


def cmd_mpr_demo(args) -> int:
    if args.n < 1 or not args.std > 0:
        raise UsageError("mpr-demo needs --n >= 1 and --std > 0")
    print(json.dumps({"n": args.n, "mean": args.mean, "std": args.std, "seed": args.seed,
                      "bins": args.bins}, sort_keys=True))
    rng = np.random.default_rng(args.seed)
    h = rng.normal(args.mean, args.std, args.n)
    before = avg_quant_error(h, use_mpr=False)
    after = avg_quant_error(h, use_mpr=True)
    hist_b = membrane_histogram(h, args.bins, DEFAULT_RANGE)
    hist_a = membrane_histogram(mpr(h), args.bins, DEFAULT_RANGE)
    out = _out_dir(args.out)
    with open(out / "mpr_demo.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count_before", "count_after"])
        for lo, hi, cb, ca in zip(hist_b.edges[:-1], hist_b.edges[1:], hist_b.counts, hist_a.counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", int(cb), int(ca)])
    with open(out / "mpr_demo_errors.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n", "mean", "std", "seed", "err_before", "err_after"])
        w.writerow([args.n, f"{args.mean:.6g}", f"{args.std:.6g}", args.seed,
                    f"{before:.6g}", f"{after:.6g}"])
    print(f"avg quantization error before {before:.6g} after {after:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikeforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a JSON config")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write a per-layer report")
    e.add_argument("checkpoint")
    e.add_argument("config")
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", help="print one neuron's H, H_hat, O, U per timestep")
    tr.add_argument("values", nargs="+", type=float, help="input current per timestep")
    tr.add_argument("--neuron", choices=["if", "lif", "srif"], default="srif")
    tr.add_argument("--mpr", action="store_true", help="apply the membrane potential rectifier")
    tr.add_argument("--v-th", type=float, default=0.5)
    tr.add_argument("--tau", type=float, default=0.5)
    tr.set_defaults(func=cmd_trace)

    m = sub.add_parser("mpr-demo", help="rectify Gaussian potentials and compare errors")
    m.add_argument("--n", type=int, default=100_000)
    m.add_argument("--mean", type=float, default=0.5)
    m.add_argument("--std", type=float, default=1.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--bins", type=int, default=60)
    m.add_argument("--out", default=".")
    m.set_defaults(func=cmd_mpr_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
