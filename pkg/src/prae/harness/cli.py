"""Command-line entry point: ``prae <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from ..errors import ConfigError, FormatError, NonFiniteError, PraeError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _csv_list(text, cast=str):
    return [cast(t) for t in text.split(",") if t.strip()]


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (NonFiniteError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    return 1


def _add_train_overrides(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--backbone", choices=["LightAE", "DeepAE"])
    p.add_argument("--depth", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--points", type=int, help="points per cloud (K)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset", help="dataset file or directory (default: synthetic)")
    p.add_argument("--dataset-format", choices=["xyz", "ply", "packed"])
    p.add_argument("--per-category", dest="synthetic_per_category", type=int)
    p.add_argument("--categories", dest="synthetic_categories", type=_csv_list)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--split", dest="split_fractions", type=lambda s: _csv_list(s, float),
                   help="train,test or train,val,test fractions")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--metrics", dest="eval_metrics", type=_csv_list)
    p.add_argument("--emd-mode", choices=["exact", "approx", "auto", "skip"])
    p.add_argument("--select-metric", choices=["cd", "emd", "hd", "f1"])
    p.add_argument("--select-split", choices=["test", "val"])
    p.add_argument("--output-dir")
    p.add_argument("--threads", type=int)


_OVERRIDE_KEYS = ("backbone", "depth", "heads", "points", "epochs", "batch_size", "learning_rate",
                  "seed", "dataset", "dataset_format", "synthetic_per_category",
                  "synthetic_categories", "data_seed", "split_fractions", "split_seed",
                  "eval_metrics", "emd_mode", "select_metric", "select_split", "output_dir",
                  "threads")


def _config_from_args(args):
    from .config import load_config

    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    return load_config(args.config, **overrides)


def cmd_generate(args):
    from ..data import CATEGORIES, default_recipes, generate_synthetic
    from ..formats import save_dataset

    shapes = args.shapes or list(CATEGORIES)
    unknown = set(shapes) - set(CATEGORIES)
    if unknown:
        raise ConfigError(f"unknown shapes {sorted(unknown)}; choose from {CATEGORIES}")
    recipes = default_recipes(args.count, args.seed, tuple(shapes))
    ds = generate_synthetic(recipes, args.points, seed=args.seed, normalized=not args.raw)
    ds.manifest["categories"] = list(shapes)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} clouds of {ds.n_points} points to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .train import train

    cfg = _config_from_args(args)
    rec = train(cfg, resume_from=args.resume)
    best = rec.best_metrics
    print(f"best epoch {rec.best_epoch}: CD {best['cd']:.6g}  EMD {best['emd']:.6g}  "
          f"HD {best['hd']:.6g}  F1 {best['f1']:.4f}")
    print(f"run record: {os.path.join(cfg.output_dir, 'run_record.json')}")
    return EXIT_OK


def cmd_eval(args):
    from ..data import split_dataset
    from ..formats import load_clouds
    from .compare import format_scaled
    from .evaluate import evaluate_checkpoint

    ds = load_clouds(args.dataset, args.format, normalized=args.normalize)
    split = args.split
    if args.split_fractions:
        ds = split_dataset(ds, args.split_fractions, args.split_seed)
    elif split != "all" and ds.split is None:
        raise ConfigError("dataset has no split; pass --split-fractions or --split all")
    report = evaluate_checkpoint(args.checkpoint, ds, split, args.emd_mode,
                                 threads=args.threads)
    d = report.as_dict()
    print("raw:    " + "  ".join(f"{k}={v:.6g}" for k, v in d.items()))
    print("scaled: " + format_scaled(report, {"cd": args.cd_scale, "hd": args.hd_scale,
                                              "emd": args.emd_scale, "f1": 100.0}))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(",".join(d) + "\n" + ",".join(repr(v) for v in d.values()) + "\n")
    return EXIT_OK


def cmd_compare(args):
    from .compare import compare_records
    from .train import RunRecord

    records = [RunRecord.from_json(p) for p in args.records]
    table = compare_records(records)
    print(table.render())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table.to_csv())
    return EXIT_OK


def cmd_sweep(args):
    from .sweep import sweep

    cfg = _config_from_args(args)
    result = sweep(cfg, args.depths, args.head_counts, args.out, resume=args.resume,
                   parallel=args.parallel)
    print(f"{len(result.records)} runs ({len(result.skipped)} reused), "
          f"{len(result.failures)} failed; CSV: {result.csv_path}")
    if result.comparison is not None:
        print(result.comparison.render())
    if result.failures:
        return max(_exit_code(exc) for _, exc in result.failures)
    return EXIT_OK


def cmd_audit(args):
    from .audit import audit_csv, audit_params, render_audit

    rows = audit_params(args.points)
    print(render_audit(rows))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(audit_csv(rows))
    bad = [r for r in rows if not r.ok]
    if bad:
        print(f"{len(bad)} mismatches", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_convert(args):
    from ..formats import (
        ASCII_PLY,
        ASCII_XYZ,
        PACKED,
        load_clouds,
        save_dataset,
        write_ply,
        write_xyz,
    )

    ds = load_clouds(args.input, args.src)
    dst = args.dst
    if dst == PACKED:
        save_dataset(args.output, ds)
    else:
        os.makedirs(args.output, exist_ok=True)
        writer = write_xyz if dst == ASCII_XYZ else write_ply
        ext = ASCII_XYZ if dst == ASCII_XYZ else ASCII_PLY
        width = max(5, len(str(len(ds))))
        for i, cloud in enumerate(ds.clouds):
            writer(os.path.join(args.output, f"cloud_{i:0{width}d}.{ext}"), cloud)
    print(f"converted {len(ds)} clouds to {dst} at {args.output}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="prae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--shapes", type=_csv_list)
    p.add_argument("--count", type=int, default=50, help="clouds per shape")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="skip normalisation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model")
    _add_train_overrides(p)
    p.add_argument("--resume", help="last.ckpt of an earlier run with the same config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", choices=["xyz", "ply", "packed"])
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--split", default="all", choices=["all", "train", "val", "test"])
    p.add_argument("--split-fractions", type=lambda s: _csv_list(s, float))
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--emd-mode", default="auto", choices=["exact", "approx", "auto", "skip"])
    p.add_argument("--cd-scale", type=float, default=1e3)
    p.add_argument("--hd-scale", type=float, default=1e2)
    p.add_argument("--emd-scale", type=float, default=1.0)
    p.add_argument("--threads", type=int)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="single- vs multi-head table from run records")
    p.add_argument("records", nargs="+", help="run_record.json files")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="train a depth x heads grid")
    _add_train_overrides(p)
    p.add_argument("--depths", type=lambda s: _csv_list(s, int), default=[1, 2, 3, 4, 5])
    p.add_argument("--head-counts", type=lambda s: _csv_list(s, int), default=[1, 2])
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("audit-params", help="decoder parameter counts vs the published table")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("convert", help="convert between xyz/ply and packed binary")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--from", dest="src", choices=["xyz", "ply", "packed"])
    p.add_argument("--to", dest="dst", required=True, choices=["xyz", "ply", "packed"])
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # overflow on a diverging run surfaces as NonFiniteError, not warnings
        with np.errstate(all="ignore"):
            return args.func(args)
    except (PraeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
