"""Command-line entry point: ``goad {train,score,eval,sweep,baseline}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import config as cfgmod
from . import persist
from .core import train
from .data import (CATEGORICAL, Encoder, TableSchema, builtin_schema, fit_normalization,
                   load_dataset, load_table, save_encoded, split)
from .evaluation import (GoadDetector, LofDetector, contamination_curve, run_repeated,
                         sweep_tasks)
from .report import write_report, write_sweep

log = logging.getLogger("goad")

BASELINES = {"lof": LofDetector}


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="dataset preset")
    p.add_argument("--data", help="dataset file (.mat/.npz/.gdat or delimited text)")
    p.add_argument("--schema", help="JSON table schema for delimited input")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("--out", help=out_help)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. train.epochs=5 (repeatable)")


def _resolve(args) -> cfgmod.RunConfig:
    overrides = list(args.set)
    for key, attr in (("data_path", "data"), ("schema_path", "schema"), ("seed", "seed"),
                      ("jobs", "jobs"), ("out", "out")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    if getattr(args, "n_runs", None) is not None:
        overrides.append(f"n_runs={args.n_runs}")
    if getattr(args, "mode", None):
        overrides.append(f"train.score_mode={json.dumps(args.mode)}")
    return cfgmod.load(args.config, args.preset, overrides).validate()


def _dataset(cfg: cfgmod.RunConfig):
    schema = TableSchema.from_file(cfg.schema_path) if cfg.schema_path else None
    return load_dataset(cfg.data_path, cfg.dataset, schema, seed=cfg.dataset_seed)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    ds = _dataset(cfg)
    parts = split(ds, replace(cfg.split, seed=cfg.seed))
    norm = fit_normalization(parts.X_train, ds.continuous_mask, cfg.normalization)
    t0 = time.time()
    model = train(norm.apply(parts.X_train), replace(cfg.train, seed=cfg.seed), cfg.bank)
    out = cfg.out if cfg.out.endswith(".goad") else os.path.join(cfg.out, "model.goad")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    persist.save(out, persist.ModelBundle(model, norm, ds.encoder, cfg.dataset))
    log.info("trained on %d rows in %.1fs, final loss %.4f", parts.X_train.shape[0],
             time.time() - t0, model.history[-1])
    print(out)
    return 0


def _score_input(bundle: persist.ModelBundle, path: str, schema_path: Optional[str]) -> np.ndarray:
    if path.endswith((".mat", ".npz", ".gdat")):
        return load_dataset(path, bundle.dataset).X
    schema = TableSchema.from_file(schema_path) if schema_path else builtin_schema(bundle.dataset)
    raw = load_table(path, schema)
    encoder = bundle.encoder
    if encoder is None:
        if any(k == CATEGORICAL for _, k in schema.columns):
            raise ValueError("model has no stored encoding; categorical input cannot be aligned")
        encoder = Encoder.fit(raw)
    return encoder.transform(raw)


def cmd_score(args) -> int:
    bundle = persist.load(args.model)
    X = _score_input(bundle, args.data, args.schema)
    scores = bundle.score(X)
    lines = "".join(f"{float(s)!r}\n" for s in scores)
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)
    return 0


def _goad(cfg: cfgmod.RunConfig) -> GoadDetector:
    return GoadDetector(cfg.train, cfg.bank)


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    ds = _dataset(cfg)
    report = run_repeated(ds, _goad(cfg), cfg.n_runs, cfg.seed, cfg.split, cfg.normalization, cfg.jobs)
    for path in write_report(cfg.out, report, stem=f"goad_{cfg.dataset}_{cfg.train.score_mode}"):
        print(path)
    return 0


def _floats(text: str) -> List[float]:
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty axis")
    return vals


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    ds = _dataset(cfg)
    if args.axis == "tasks":
        values = [int(v) for v in (args.values or [2, 4, 8, 16, 32, 64, 128, 256])]
        sweep = sweep_tasks(ds, _goad(cfg), values, cfg.n_runs, cfg.seed, cfg.split,
                            cfg.normalization, cfg.jobs)
    else:
        values = args.values if args.values is not None else [0.0, 0.01, 0.02, 0.05, 0.10]
        sweep = contamination_curve(ds, _goad(cfg), values, cfg.n_runs, cfg.seed, cfg.split,
                                    cfg.normalization, cfg.jobs)
    for path in write_sweep(cfg.out, sweep, stem=f"goad_{cfg.dataset}"):
        print(path)
    return 0


def cmd_baseline(args) -> int:
    if args.method not in BASELINES:
        raise SystemExit(f"unknown baseline {args.method!r}; available: {', '.join(sorted(BASELINES))}")
    cfg = _resolve(args)
    ds = _dataset(cfg)
    det = BASELINES[args.method](k=cfg.lof_k)
    report = run_repeated(ds, det, cfg.n_runs, cfg.seed, cfg.split, cfg.normalization, cfg.jobs)
    for path in write_report(cfg.out, report, stem=f"{args.method}_{cfg.dataset}"):
        print(path)
    return 0


def cmd_encode(args) -> int:
    cfg = _resolve(args)
    ds = _dataset(cfg)
    out = cfg.out if cfg.out.endswith(".gdat") else os.path.join(cfg.out, f"{cfg.dataset}.gdat")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_encoded(out, ds)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goad", description="Transformation-based anomaly detection on tabular data")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model and write a model file")
    _common(t, "model file (*.goad) or output directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score a data file with a saved model")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("--schema", help="JSON table schema for delimited input")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="repeated seeded runs of the evaluation protocol")
    _common(e, "report directory")
    e.add_argument("--n-runs", type=int)
    e.add_argument("--mode", choices=["openset", "softmax"], help="scoring mode")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="F1 against number of tasks or training contamination")
    _common(w, "report directory")
    w.add_argument("--axis", choices=["tasks", "contamination"], required=True)
    w.add_argument("--values", type=_floats, help="comma-separated axis values")
    w.add_argument("--n-runs", type=int)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("baseline", help="run a baseline detector through the same protocol")
    _common(b, "report directory")
    b.add_argument("--method", default="lof")
    b.add_argument("--n-runs", type=int)
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("encode", help="write the encoded dataset to a binary cache file")
    _common(c, "cache file (*.gdat) or directory")
    c.set_defaults(func=cmd_encode)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"goad: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
