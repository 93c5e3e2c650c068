"""Single-head vs multi-head comparison tables.

Signed deltas are ``multi - single``. A metric improved when it moved in its
good direction (lower CD/EMD/HD, higher F1). Percent improvement is
``100 * (single - multi) / single`` for CD, EMD and HD and
``100 * (multi - single) / single`` for F1; the aggregate row is the mean
of those percentages over rows.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

TABLE_METRICS = ("cd", "emd", "hd", "f1")
LOWER_IS_BETTER = {"cd": True, "emd": True, "hd": True, "f1": False}
# presentation scales matching the published tables (F1 shown in percent)
DEFAULT_SCALES = {"cd": 1e3, "emd": 1.0, "hd": 1e2, "f1": 100.0}


@dataclass
class ComparisonRow:
    backbone: str
    depth: int
    single: dict
    multi: dict
    delta: dict = field(default_factory=dict)
    improvement_pct: dict = field(default_factory=dict)
    improved: dict = field(default_factory=dict)


@dataclass
class ComparisonTable:
    rows: list
    mean_improvement_pct: dict
    metrics: tuple = TABLE_METRICS

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["backbone", "depth"]
        for m in self.metrics:
            header += [f"single_{m}", f"multi_{m}", f"delta_{m}", f"improvement_pct_{m}",
                       f"improved_{m}"]
        w.writerow(header)
        for r in self.rows:
            line = [r.backbone, r.depth]
            for m in self.metrics:
                line += [repr(r.single[m]), repr(r.multi[m]), repr(r.delta[m]),
                         repr(r.improvement_pct[m]), r.improved[m]]
            w.writerow(line)
        w.writerow(["mean", ""] + sum(
            (["", "", "", repr(self.mean_improvement_pct[m]), ""] for m in self.metrics), []))
        return buf.getvalue()

    def render(self, scales=None, digits=2):
        """Human-readable table; ``+`` marks an improvement, ``-`` a decline."""
        scales = dict(DEFAULT_SCALES if scales is None else scales)
        cols = [f"{m.upper()}" for m in self.metrics]
        lines = ["backbone  depth  " + "  ".join(f"{c:>26}" for c in cols)]
        for r in self.rows:
            cells = []
            for m in self.metrics:
                s = scales.get(m, 1.0)
                mark = "+" if r.improved[m] else ("=" if r.delta[m] == 0 else "-")
                cells.append(f"{r.single[m] * s:.{digits}f} -> {r.multi[m] * s:.{digits}f} "
                             f"({r.delta[m] * s:+.{digits}f}{mark})")
            lines.append(f"{r.backbone:<8}  {r.depth:>5}  " + "  ".join(f"{c:>26}" for c in cells))
        lines.append("mean improvement: " + ", ".join(
            f"{m.upper()} {self.mean_improvement_pct[m]:+.2f}%" for m in self.metrics))
        return "\n".join(lines)


def compare_pair(backbone, depth, single, multi, metrics=TABLE_METRICS):
    row = ComparisonRow(backbone, int(depth), {m: float(single[m]) for m in metrics},
                        {m: float(multi[m]) for m in metrics})
    for m in metrics:
        s, mu = row.single[m], row.multi[m]
        row.delta[m] = mu - s
        gain = (s - mu) if LOWER_IS_BETTER[m] else (mu - s)
        row.improvement_pct[m] = 100.0 * gain / s if s != 0 else float("nan")
        row.improved[m] = bool(gain > 0)
    return row


def compare_rows(entries, metrics=TABLE_METRICS):
    """``entries``: iterable of ``(backbone, depth, single_metrics, multi_metrics)``."""
    rows = [compare_pair(b, d, s, m, metrics) for b, d, s, m in entries]
    if not rows:
        raise ConfigError("nothing to compare")
    mean = {m: float(np.mean([r.improvement_pct[m] for r in rows])) for m in metrics}
    return ComparisonTable(rows, mean, tuple(metrics))


def compare_records(records, metrics=TABLE_METRICS):
    """Pair run records by (backbone, depth): heads == 1 against heads > 1."""
    single, multi = {}, {}
    for rec in records:
        cfg = rec.config if hasattr(rec, "config") else rec["config"]
        best = rec.best_metrics if hasattr(rec, "best_metrics") else rec["best_metrics"]
        key = (cfg["backbone"], int(cfg["depth"]))
        target = single if int(cfg["heads"]) == 1 else multi
        if key in target:
            raise ConfigError(f"duplicate run for {key} with heads={cfg['heads']}")
        target[key] = best
    if set(single) != set(multi):
        missing = sorted(set(single) ^ set(multi))
        raise ConfigError(f"unpaired rows: {missing}")
    entries = [(b, d, single[(b, d)], multi[(b, d)]) for b, d in sorted(single)]
    return compare_rows(entries, metrics)


def compare_csv_rows(rows, metrics=TABLE_METRICS):
    """Build a table from sweep CSV rows (dicts with backbone/depth/heads/metrics)."""
    single, multi = {}, {}
    for r in rows:
        key = (r["backbone"], int(r["depth"]))
        vals = {m: float(r[m]) for m in metrics}
        (single if int(r["heads"]) == 1 else multi)[key] = vals
    if set(single) != set(multi):
        raise ConfigError(f"unpaired rows: {sorted(set(single) ^ set(multi))}")
    return compare_rows([(b, d, single[(b, d)], multi[(b, d)]) for b, d in sorted(single)],
                        metrics)


def format_scaled(report, scales=None, digits=2):
    """Presentation string, e.g. raw CD 0.00318 -> ``CD(x1000)=3.18``."""
    scales = dict(DEFAULT_SCALES if scales is None else scales)
    parts = []
    for m in TABLE_METRICS:
        val = report[m] if isinstance(report, dict) else getattr(report, m)
        s = scales.get(m, 1.0)
        label = m.upper() if s == 1.0 else f"{m.upper()}(x{s:g})"
        parts.append(f"{label}={val * s:.{digits}f}")
    return "  ".join(parts)
