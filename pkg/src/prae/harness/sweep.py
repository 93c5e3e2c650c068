"""Depth x head-count grids: run every cell, then emit CSV, plots and the
single-vs-multi comparison."""
from __future__ import annotations

import csv
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from ..errors import ConfigError, PraeError
from .compare import compare_csv_rows
from .config import ExperimentConfig, thread_cap
from .train import RunRecord, prepare_dataset, train

log = logging.getLogger(__name__)

CSV_COLUMNS = ("backbone", "depth", "heads", "params", "cd", "emd", "hd", "f1")
CSV_NAME = "metrics_vs_params.csv"


@dataclass
class SweepResult:
    records: list
    failures: list = field(default_factory=list)  # (cell name, exception)
    skipped: list = field(default_factory=list)
    csv_path: str | None = None
    plot_paths: list = field(default_factory=list)
    comparison: object = None


def cell_name(cfg):
    return f"{cfg.backbone}_d{cfg.depth}_m{cfg.heads}"


def _finished(cfg, path):
    if not os.path.exists(path):
        return None
    try:
        rec = RunRecord.from_json(path)
    except (OSError, ValueError, TypeError):
        return None
    if rec.completed and rec.config_hash == cfg.config_hash():
        return rec
    return None


def _run_cell(cfg_dict):
    # worker entry point for process pools
    return train(ExperimentConfig.from_dict(cfg_dict))


def sweep(template: ExperimentConfig, depths, head_counts, out_dir, resume=False, parallel=1):
    """Run the grid. Every cell is validated before any training starts."""
    cells = []
    for depth in depths:
        for heads in head_counts:
            cfg = template.replace(depth=int(depth), heads=int(heads))
            cfg = cfg.replace(output_dir=os.path.join(out_dir, cell_name(cfg)))
            cfg.validate()
            cells.append(cfg)
    os.makedirs(out_dir, exist_ok=True)
    dataset = prepare_dataset(template)
    for cfg in cells:
        cfg.validate(dataset_points=dataset.n_points)

    result = SweepResult(records=[])
    todo = []
    for cfg in cells:
        done = _finished(cfg, os.path.join(cfg.output_dir, "run_record.json")) if resume else None
        if done is not None:
            log.info("skipping finished cell %s", cell_name(cfg))
            result.records.append(done)
            result.skipped.append(cell_name(cfg))
        else:
            todo.append(cfg)

    workers = thread_cap(parallel) if parallel and parallel > 1 else 1
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [(cfg, pool.submit(_run_cell, cfg.to_dict())) for cfg in todo]
            for cfg, fut in futures:
                try:
                    result.records.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - partial-failure policy
                    log.error("cell %s failed: %s", cell_name(cfg), exc)
                    result.failures.append((cell_name(cfg), exc))
    else:
        for cfg in todo:
            try:
                result.records.append(train(cfg, dataset=dataset))
            except (PraeError, OSError, ArithmeticError) as exc:
                log.error("cell %s failed: %s\n%s", cell_name(cfg), exc, traceback.format_exc())
                result.failures.append((cell_name(cfg), exc))

    result.records.sort(key=lambda r: (r.config["backbone"], r.config["depth"], r.config["heads"]))
    rows = sweep_rows(result.records)
    result.csv_path = os.path.join(out_dir, CSV_NAME)
    write_sweep_csv(result.csv_path, rows)
    if rows:
        result.plot_paths = plot_sweep(rows, out_dir)
    try:
        result.comparison = compare_csv_rows(rows)
    except ConfigError:
        result.comparison = None
    if result.comparison is not None:
        with open(os.path.join(out_dir, "comparison.csv"), "w") as fh:
            fh.write(result.comparison.to_csv())
        with open(os.path.join(out_dir, "comparison.txt"), "w") as fh:
            fh.write(result.comparison.render() + "\n")
    return result


def sweep_rows(records):
    rows = []
    for rec in records:
        c, best = rec.config, rec.best_metrics
        rows.append({"backbone": c["backbone"], "depth": int(c["depth"]), "heads": int(c["heads"]),
                     "params": int(rec.param_count),
                     **{m: float(best[m]) for m in ("cd", "emd", "hd", "f1")}})
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r["backbone"], r["depth"], r["heads"], r["params"],
                        *(repr(r[m]) for m in ("cd", "emd", "hd", "f1"))])


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["depth"], r["heads"], r["params"] = int(r["depth"]), int(r["heads"]), int(r["params"])
        for m in ("cd", "emd", "hd", "f1"):
            r[m] = float(r[m])
    return rows


def plot_sweep(rows, out_dir):
    """SVG plots of each metric against depth and against parameter count."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    metrics = ("cd", "emd", "hd", "f1")
    for xkey, fname in (("depth", "metrics_vs_depth.svg"), ("params", "metrics_vs_params.svg")):
        fig, axes = plt.subplots(1, 4, figsize=(16, 3.6))
        for ax, m in zip(axes, metrics):
            for (backbone, heads) in sorted({(r["backbone"], r["heads"]) for r in rows}):
                sel = sorted((r for r in rows if r["backbone"] == backbone and r["heads"] == heads),
                             key=lambda r: r[xkey])
                label = f"{backbone} {'single' if heads == 1 else f'{heads}-head'}"
                ax.plot([r[xkey] for r in sel], [r[m] for r in sel], marker="o", label=label)
            ax.set_xlabel("decoder depth" if xkey == "depth" else "decoder parameters")
            ax.set_title(m.upper())
            if xkey == "params":
                ax.set_xscale("log")
        axes[0].legend(fontsize="small")
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths
