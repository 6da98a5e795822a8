"""Report writers: JSON lines, tab-separated sweep columns, text tables, figures."""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, List

import numpy as np

from .evaluation import ABSENT, DATASETS, MetricsReport, SweepResult, reference_table


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if v is ABSENT:
        return None
    return v


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({k: _jsonable(v) for k, v in rec.items()}, sort_keys=True) + "\n")


def _cell(v, width=7):
    if v is ABSENT or v is None:
        return "-".rjust(width)
    return f"{v:{width}.1f}"


def render_reference(datasets=DATASETS) -> str:
    """Published F1 table, blank sigma cells shown as '-'."""
    head = "Method".ljust(10) + "".join(f"{d:>16}" for d in datasets)
    sub = " " * 10 + "".join(f"{'F1':>8}{'sigma':>8}" for _ in datasets)
    lines = [head, sub]
    for method, row in reference_table().items():
        cells = "".join(f"{_cell(row[d]['f1'], 8)}{_cell(row[d]['sigma'], 8)}" for d in datasets)
        lines.append(method.ljust(10) + cells)
    return "\n".join(lines)


def render_report(report: MetricsReport) -> str:
    """Measured F1 next to the published rows for the same dataset."""
    ds = report.dataset.lower()
    lines = [f"{report.method} on {report.dataset}: {len(report.per_run)} run(s), "
             f"{report.n_anomalies} test anomalies",
             f"  F1        {100 * report.mean:6.1f}  (sigma {100 * report.std:.1f})",
             f"  precision {100 * report.precision:6.1f}",
             f"  recall    {100 * report.recall:6.1f}",
             f"  ROC AUC   {100 * report.roc_auc:6.1f}" if math.isfinite(report.roc_auc) else "  ROC AUC   n/a",
             ""]
    if ds in DATASETS:
        lines.append(f"{'Method':<14}{'F1':>8}{'sigma':>8}")
        for method, row in reference_table().items():
            lines.append(f"{method + ' (published)':<14}{_cell(row[ds]['f1'], 8)}{_cell(row[ds]['sigma'], 8)}")
        lines.append(f"{report.method + ' (here)':<14}{100 * report.mean:8.1f}{100 * report.std:8.1f}")
    return "\n".join(lines) + "\n"


def write_report(out_dir: str, report: MetricsReport, stem: str = "metrics") -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    jsonl = os.path.join(out_dir, f"{stem}.jsonl")
    records = [dict(kind="run", method=report.method, dataset=report.dataset, **r) for r in report.per_run]
    records.append(dict(kind="summary", **report.summary()))
    write_jsonl(jsonl, records)
    txt = os.path.join(out_dir, f"{stem}.txt")
    with open(txt, "w") as fh:
        fh.write(render_report(report))
    png = os.path.join(out_dir, f"{stem}_f1.png")
    plot_runs(report, png)
    return [jsonl, txt, png]


def write_sweep(out_dir: str, sweep: SweepResult, stem: str = "sweep") -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    tsv = os.path.join(out_dir, f"{stem}_{sweep.axis}.tsv")
    with open(tsv, "w") as fh:
        fh.write(f"{sweep.axis}\tf1_mean\tf1_std\n")
        for x, m, s in sweep.rows():
            fh.write(f"{x!r}\t{m!r}\t{s!r}\n")
    jsonl = os.path.join(out_dir, f"{stem}_{sweep.axis}.jsonl")
    write_jsonl(jsonl, [dict(axis=sweep.axis, value=x, **r.summary())
                        for x, r in zip(sweep.values, sweep.reports)])
    png = os.path.join(out_dir, f"{stem}_{sweep.axis}.png")
    plot_sweep(sweep, png)
    return [tsv, jsonl, png]


# ---------------------------------------------------------------- figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update({"font.size": 10, "axes.spines.top": False,
                         "axes.spines.right": False, "savefig.dpi": 150})
    return plt


def figure(width=5.0, height=None):
    plt = _pyplot()
    golden = (math.sqrt(5) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    return plt, fig, ax


def plot_sweep(sweep: SweepResult, path: str) -> None:
    plt, fig, ax = figure()
    x = np.asarray(sweep.values, dtype=float)
    m = np.array([r.mean for r in sweep.reports])
    s = np.array([r.std for r in sweep.reports])
    ax.errorbar(x, m, yerr=s, marker="o", capsize=3, lw=1.2)
    if sweep.axis == "tasks" and np.all(x > 0):
        ax.set_xscale("log", base=2)
    ax.set_xlabel("number of tasks" if sweep.axis == "tasks" else "training contamination fraction")
    ax.set_ylabel("F1")
    ax.set_title(f"{sweep.reports[0].method} on {sweep.reports[0].dataset}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_runs(report: MetricsReport, path: str) -> None:
    plt, fig, ax = figure()
    f1 = report.f1_values
    ax.plot(np.arange(f1.size), f1, "o", ms=3)
    ax.axhline(report.mean, color="k", lw=0.8, ls="--")
    ax.set_xlabel("run")
    ax.set_ylabel("F1")
    ax.set_title(f"{report.method} on {report.dataset}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
