"""Command line front end.

Subcommands: gen-data, train, eval, simulate-coverage, bench-loss.
Exit codes: 0 success, 2 usage, 3 input validation, 4 numerical failure.
Structured errors go to stderr as ``error: <code>: <message>``; tabular
output is always CSV. AUCSEG_THREADS caps worker threads without
changing any result.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from .bank import STRATEGIES, BankConfig
from .coverage import required_batch_size, simulate_coverage, union_bound
from .errors import NumericalError, ValidationError
from .grids import class_stats
from .losses import SURROGATES, ovo_auc_loss, softmax
from .metrics import (argmax_labels, compute_tau, imbalance_ratio, iou_report,
                      make_partition, ovo_auc_metric)
from .synth import GenConfig, generate, read_segd, write_segd
from .train import TrainConfig, evaluate, forward, load_model, train_and_save


def _size(text: str):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except Exception:
        raise argparse.ArgumentTypeError("size must look like 64x64, got %r" % text)


def _writer(path):
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", newline="")


def _emit_csv(path, header, rows):
    out = _writer(path)
    try:
        w = csv.writer(out)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.10g" % x


def cmd_gen_data(args) -> int:
    presence = [1.0] * args.classes
    for c in range(1, args.classes):
        presence[c] = args.presence
    if args.tail_count > 0:
        if args.tail_count >= args.classes:
            raise ValidationError("tail_count must leave at least one non-tail class")
        for c in range(args.classes - args.tail_count, args.classes):
            presence[c] = args.tail_presence
    cfg = GenConfig(
        num_classes=args.classes,
        height=args.size[0],
        width=args.size[1],
        channels=args.channels,
        images=args.images,
        zipf_s=args.zipf,
        presence=tuple(presence),
        shapes_per_class=args.shapes_per_class,
        feature_noise_sigma=args.noise,
        seed=args.seed,
    )
    items, truth = generate(cfg)
    write_segd(args.out, items)
    print("wrote %d images (%dx%d, %d classes, %d channels) to %s"
          % (len(items), cfg.height, cfg.width, cfg.num_classes, cfg.channels, args.out))
    return 0


def cmd_train(args) -> int:
    items = read_segd(args.data)
    bank = None
    if args.memory_size > 0:
        bank = BankConfig(
            memory_size=args.memory_size,
            sample_ratio=args.sample_ratio,
            resize_ratio=args.resize_ratio,
            strategy=args.strategy,
            tail_fraction=args.tail_fraction,
        )
    cfg = TrainConfig(
        surrogate=args.surrogate,
        mode=args.mode,
        objective=args.objective.replace("-", "_"),
        lam=args.lam,
        pair_norm=args.pair_norm,
        batch_size=args.batch_size,
        max_iter=args.max_iter,
        base_lr=args.base_lr,
        lr_floor=args.lr_floor,
        warmup_iters=args.warmup_iters,
        eval_every=args.eval_every,
        eval_fraction=args.eval_fraction,
        head_count=args.head_count,
        middle_count=args.middle_count,
        bank=bank,
        seed=args.seed,
    )
    result = train_and_save(items, cfg, args.out)
    last = result.evals[-1]
    print("finished %d iterations: miou=%s tail_miou=%s ovo_auc=%s (outputs in %s)"
          % (last.iteration, _fmt(last.miou), _fmt(last.tail_miou), _fmt(last.ovo_auc), args.out))
    return 0


def cmd_eval(args) -> int:
    items = read_segd(args.data)
    model = load_model(args.model)
    labels = [lab for _, lab in items]
    stats = class_stats(labels)
    n_occ = int(np.sum(stats.count > 0))
    head_n = args.head_count or max(1, n_occ // 3)
    middle_n = args.middle_count or max(1, n_occ // 3)
    partition = make_partition(stats, head_n, middle_n)
    report, auc = evaluate(model, items, partition)
    tau = compute_tau(stats)
    tau_norm = compute_tau(stats, mean_normalized=True)
    rm = imbalance_ratio(stats, partition.head)
    _emit_csv(args.out,
              ["miou", "head_miou", "middle_miou", "tail_miou", "ovo_auc",
               "tau", "tau_mean_normalized", "imbalance_ratio"],
              [[_fmt(report.mean_iou), _fmt(report.group_means["head"]),
                _fmt(report.group_means["middle"]), _fmt(report.group_means["tail"]),
                _fmt(auc), _fmt(tau), _fmt(tau_norm), _fmt(rm)]])
    return 0


def cmd_simulate_coverage(args) -> int:
    required = required_batch_size(args.classes, args.pmin, args.delta)
    presence = np.full(args.classes, args.pmin)
    sizes = [b for b in (required - 1, required, 2 * required) if b >= 1]
    rows = []
    for b in dict.fromkeys(sizes):
        res = simulate_coverage(presence, b, args.trials, seed=args.seed)
        rows.append([b, required, _fmt(union_bound(args.classes, args.pmin, b)),
                     res.failures, res.trials, _fmt(res.failure_rate)])
    _emit_csv(args.out,
              ["batch_size", "required_batch_size", "union_bound", "failures", "trials", "failure_rate"],
              rows)
    return 0


def cmd_bench_loss(args) -> int:
    if args.pixels < 2 * args.classes:
        raise ValidationError("need at least 2 pixels per class to benchmark")
    rng = np.random.default_rng(args.seed)
    labels = np.concatenate([np.arange(args.classes),
                             rng.integers(args.classes, size=args.pixels - args.classes)])
    labels = labels[rng.permutation(args.pixels)].astype(np.int32).reshape(1, args.pixels)
    scores = softmax(rng.standard_normal((1, args.pixels, args.classes)))
    kinds = SURROGATES if args.surrogate == "all" else (args.surrogate,)
    rows = []
    for kind in kinds:
        results = {}
        for kernel in ("naive", "fast"):
            best = float("inf")
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                rep = ovo_auc_loss([scores], [labels], kind=kind, kernel=kernel)
                best = min(best, time.perf_counter() - t0)
            results[kernel] = (best, rep.loss)
        naive_t, naive_loss = results["naive"]
        fast_t, fast_loss = results["fast"]
        if abs(fast_loss - naive_loss) > 1e-9 * max(1.0, abs(naive_loss)):
            raise NumericalError(
                "fast %s kernel disagrees with naive: %.17g vs %.17g" % (kind, fast_loss, naive_loss))
        for kernel in ("naive", "fast"):
            rows.append([kind, kernel, args.pixels, args.classes,
                         _fmt(results[kernel][0]), _fmt(results[kernel][1])])
    _emit_csv(args.out, ["surrogate", "kernel", "pixels", "classes", "seconds", "loss"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aucseg",
        description="Pixel-level pairwise ranking losses for long-tail dense labeling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset (.segd)")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--images", type=int, required=True)
    g.add_argument("--size", type=_size, required=True, help="HxW, e.g. 48x48")
    g.add_argument("--zipf", type=float, default=1.0)
    g.add_argument("--channels", type=int, default=4)
    g.add_argument("--shapes-per-class", type=int, default=2)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--presence", type=float, default=1.0)
    g.add_argument("--tail-count", type=int, default=0)
    g.add_argument("--tail-presence", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train the per-pixel model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--surrogate", choices=SURROGATES, default="square")
    t.add_argument("--mode", choices=("ovo", "ova"), default="ovo")
    t.add_argument("--objective", choices=("auc-ce", "ce"), default="auc-ce")
    t.add_argument("--lambda", dest="lam", type=float, default=0.25)
    t.add_argument("--pair-norm", choices=("union", "original"), default="union")
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--max-iter", type=int, default=500)
    t.add_argument("--base-lr", type=float, default=0.5)
    t.add_argument("--lr-floor", type=float, default=1e-6)
    t.add_argument("--warmup-iters", type=int, default=50)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--eval-fraction", type=float, default=0.2)
    t.add_argument("--head-count", type=int, default=0)
    t.add_argument("--middle-count", type=int, default=0)
    t.add_argument("--memory-size", type=int, default=5, help="0 disables the bank")
    t.add_argument("--sample-ratio", type=float, default=0.05)
    t.add_argument("--resize-ratio", type=float, default=0.4)
    t.add_argument("--strategy", choices=STRATEGIES, default="random")
    t.add_argument("--tail-fraction", type=float, default=0.34)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--head-count", type=int, default=0)
    e.add_argument("--middle-count", type=int, default=0)
    e.add_argument("--out", default=None, help="CSV path, default stdout")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("simulate-coverage", help="class coverage bound vs Monte Carlo")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--pmin", type=float, required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--trials", type=int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="CSV path, default stdout")
    s.set_defaults(fn=cmd_simulate_coverage)

    b = sub.add_parser("bench-loss", help="naive vs decomposed loss timings")
    b.add_argument("--pixels", type=int, required=True)
    b.add_argument("--classes", type=int, default=2)
    b.add_argument("--surrogate", choices=SURROGATES + ("all",), default="all")
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV path, default stdout")
    b.set_defaults(fn=cmd_bench_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print("error: validation: %s" % exc, file=sys.stderr)
        return 3
    except NumericalError as exc:
        print("error: numerical: %s" % exc, file=sys.stderr)
        return 4
    except OSError as exc:
        print("error: validation: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
