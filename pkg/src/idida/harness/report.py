"""Aggregation of run reports into mean and standard deviation tables."""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .training import SPLITS, MetricsReport

CSV_FIELDS = ("label", "ablation", "runs") + tuple(f"{s}_{stat}" for s in SPLITS for stat in ("mean", "std"))


class ReportError(ValueError):
    pass


def aggregate(runs: list[MetricsReport]) -> dict:
    """Mean and population std of each split metric, grouped by run label in first-seen order."""
    if not runs:
        raise ReportError("report needs at least one run")
    tasks = {r.task for r in runs}
    if len(tasks) > 1:
        raise ReportError(f"cannot aggregate runs of different tasks: {', '.join(sorted(tasks))}")
    groups: OrderedDict[str, list[MetricsReport]] = OrderedDict()
    for r in runs:
        groups.setdefault(r.label or r.ablation, []).append(r)
    rows = []
    for label, members in groups.items():
        row = {"label": label, "ablation": members[0].ablation, "runs": len(members)}
        for split in SPLITS:
            vals = np.array([getattr(m, f"{split}_metric") for m in members], dtype=np.float64)
            row[f"{split}_mean"] = float(vals.mean())
            row[f"{split}_std"] = float(vals.std())
            row[f"{split}_values"] = vals.tolist()
        rows.append(row)
    return {"task": runs[0].task, "metric": runs[0].metric, "groups": rows}


def report_emit(runs: list[MetricsReport], out) -> tuple[Path, Path]:
    """Write ``report.json`` and ``report.csv`` under ``out``; both hold the same numbers."""
    table = aggregate(runs)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    jpath, cpath = d / "report.json", d / "report.csv"
    jpath.write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    with open(cpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for row in table["groups"]:
            w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in CSV_FIELDS])
    return jpath, cpath


def load_runs(paths) -> list[MetricsReport]:
    """Read run reports from files or from directories containing ``metrics.json``."""
    runs = []
    for p in paths:
        p = Path(p)
        files = sorted(p.rglob("metrics.json")) if p.is_dir() else [p]
        if not files:
            raise ReportError(f"{p}: no metrics.json found")
        for f in files:
            runs.append(MetricsReport.from_dict(json.loads(f.read_text(encoding="utf-8"))))
    return runs
