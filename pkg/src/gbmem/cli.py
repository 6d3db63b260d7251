"""Command line front-end.

Subcommands: synth, fit-bmm, sample, encode, decode, run-cil, sweep,
memory-report. Errors print ``error [<category>]: <message>`` to stderr and
exit with the category's code.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import bmm
from .binarizers import ThermometerCodec, calibrate_range
from .bitmatrix import BitMatrix
from .config import load_config
from .datasets import LabeledEmbeddings, load_embeddings, save_embeddings, split_by_class
from .errors import ConfigurationError, GbmError
from .harness import RunConfig, load_data, run, sweep_csv, sweep_memory
from .memory import (
    GbmStore,
    MemoryRow,
    decode_store,
    generate,
    memory_report_csv,
    save_store,
)
from .rng import SeededRng

REFERENCE_ROWS = [("lr", 75, 1), ("lr", 100, 1), ("lr", 150, 1), ("gbm", 1, 32), ("gbm", 4, 32), ("gbm", 8, 32)]


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config, seed=args.seed)
    cfg = RunConfig()
    return cfg.replace(seed=args.seed) if args.seed is not None else cfg


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_synth(args):
    cfg = _config(args)
    train, test = load_data(cfg.replace(dataset=args.kind))
    save_embeddings(train, args.out + "_train.gbm")
    save_embeddings(test, args.out + "_test.gbm")
    print(f"wrote {train.n_rows} train / {test.n_rows} test rows, D={train.dim}, "
          f"{len(train.classes)} classes -> {args.out}_{{train,test}}.gbm")


def _em_config(args):
    return bmm.EmConfig(k=args.k, eps=args.eps, n_max=args.n_max, n_init=args.n_init, n_iter=args.n_iter,
                        pi_trainable=not args.fixed_pi, init_mode=args.init_mode, seed=args.seed or 0)


def cmd_fit_bmm(args):
    ds = load_embeddings(args.input)
    if not ds.is_binary:
        raise ConfigurationError("fit-bmm needs a bit-packed embedding file")
    em = _em_config(args)
    rng = SeededRng(args.seed or 0)
    per_class = split_by_class(ds)
    if args.class_id is not None:
        if args.class_id not in per_class:
            raise ConfigurationError(f"class {args.class_id} not in {args.input}")
        params, report = bmm.fit(per_class[args.class_id], em, rng)
        model = bmm.quantize(params, args.q) if args.q else params
        bmm.save_model(model, args.out)
        print(f"class {args.class_id}: K={em.k}, {report.iterations} EM steps, "
              f"converged={report.converged}, log-likelihood {report.ll_trace[-1]:.4f}")
        return
    store = GbmStore(ds.dim, em.k, args.q or 32, args.weighting)
    for c in sorted(per_class):
        store = store.update(c, per_class[c], em, rng.child(c))
    save_store(store, args.out)
    print(f"stored {store.n_classes} classes, K={store.k}, q={store.q}, {store.memory_bits()} bits")


def cmd_sample(args):
    with open(args.model, "rb") as fh:
        buf = fh.read()
    rng = SeededRng(args.seed or 0)
    if buf[:4] == bmm.MODEL_MAGIC:
        model = bmm.load_model(args.model)
        params = bmm.dequantize(model) if isinstance(model, bmm.QuantizedBmm) else model
        bits = bmm.sample(params, args.n, rng)
        labels = np.full(args.n, args.label, dtype=np.int64)
    else:
        bits, labels = generate(decode_store(buf), args.n, rng)
    save_embeddings(LabeledEmbeddings(bits, labels), args.out)
    print(f"wrote {args.n} samples to {args.out}")


def cmd_encode(args):
    ds = load_embeddings(args.input)
    if ds.is_binary:
        raise ConfigurationError("encode needs a real-valued embedding file")
    if args.codec and os.path.exists(args.codec) and not args.recalibrate:
        codec = ThermometerCodec.load(args.codec)
    else:
        codec = ThermometerCodec(args.p, calibrate_range(ds.data))
        if args.codec:
            codec.save(args.codec)
    save_embeddings(LabeledEmbeddings(codec.encode(ds.data), ds.labels), args.out)
    print(f"encoded {ds.n_rows} rows: {ds.dim} features x p={codec.p} -> {codec.width} bits")


def cmd_decode(args):
    ds = load_embeddings(args.input)
    if not ds.is_binary:
        raise ConfigurationError("decode needs a bit-packed embedding file")
    p = ThermometerCodec.load(args.codec).p if args.codec else args.p
    from .binarizers import therm_decode

    save_embeddings(LabeledEmbeddings(therm_decode(ds.data, p), ds.labels), args.out)
    print(f"decoded {ds.n_rows} rows to {ds.dim // p} features")


def cmd_run_cil(args):
    cfg = _config(args)
    report = run(cfg)
    _write(args.out, report.to_csv())
    print(report.summary())


def cmd_sweep(args):
    cfg = _config(args)
    values = [int(v) for v in args.values.split(",") if v]
    rows = sweep_memory(cfg, {args.axis: values})
    _write(args.out, sweep_csv(rows))
    for m, v, bits, acc in rows:
        print(f"{m:4s} {args.axis}={v:<5d} memory {bits:>12d} bits  avg acc {acc:.4f}")


def cmd_memory_report(args):
    if args.reference:
        rows = [MemoryRow(m, v, q, 12544, 10) for m, v, q in REFERENCE_ROWS]
    else:
        values = [int(v) for v in args.values.split(",") if v]
        rows = [MemoryRow(args.method, v, args.q if args.method == "gbm" else 1, args.d, args.n_classes)
                for v in values]
    text = memory_report_csv(rows)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gbmem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, config=False):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", help="flat key = value configuration file")
        return sp

    sp = add("synth", cmd_synth, "write a synthetic train/test dataset", config=True)
    sp.add_argument("--kind", choices=("synth", "synth_gaussian"), default="synth")
    sp.add_argument("--out", required=True, help="output prefix")

    sp = add("fit-bmm", cmd_fit_bmm, "fit per-class Bernoulli mixtures")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--class-id", type=int, default=None, help="fit a single class to a GBMM model file")
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--q", type=int, default=0, help="prototype bits (0 = keep float64 for single models)")
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--n-max", type=int, default=10)
    sp.add_argument("--n-init", type=int, default=5)
    sp.add_argument("--n-iter", type=int, default=3)
    sp.add_argument("--fixed-pi", action="store_true")
    sp.add_argument("--init-mode", choices=("centroid", "random"), default="centroid")
    sp.add_argument("--weighting", choices=("uniform", "by_count"), default="uniform")

    sp = add("sample", cmd_sample, "draw pseudo-exemplars from a model or store file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--label", type=int, default=0, help="label for single-model samples")
    sp.add_argument("--out", required=True)

    sp = add("encode", cmd_encode, "thermometer-encode a real-valued embedding file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--codec", help="JSON sidecar; reused if it exists")
    sp.add_argument("--recalibrate", action="store_true")

    sp = add("decode", cmd_decode, "average thermometer segments back to [0, 1] features")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--codec")

    sp = add("run-cil", cmd_run_cil, "run one class-incremental experiment", config=True)
    sp.add_argument("--out", default="metrics.csv")

    sp = add("sweep", cmd_sweep, "memory/accuracy sweep over one axis", config=True)
    sp.add_argument("--axis", choices=("lr_E", "gbm_q", "gbm_K"), required=True)
    sp.add_argument("--values", required=True, help="comma-separated axis values")
    sp.add_argument("--out", default="sweep.csv")

    sp = add("memory-report", cmd_memory_report, "memory accounting table")
    sp.add_argument("--reference", action="store_true", help="reference rows: D=12544, ten classes")
    sp.add_argument("--method", choices=("gbm", "lr"), default="gbm")
    sp.add_argument("--values", default="1", help="comma-separated K (gbm) or E (lr)")
    sp.add_argument("--q", type=int, default=32)
    sp.add_argument("--d", type=int, default=12544)
    sp.add_argument("--n-classes", type=int, default=10)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except GbmError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 10
    return 0


if __name__ == "__main__":
    sys.exit(main())
