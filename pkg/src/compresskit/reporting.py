"""Summary tables and plot-data emission from persisted records.

The headline table lists, per pipeline order, the best bit-operation
compression ratio whose accuracy loss against that run's own baseline
stays within each threshold (0.2 / 0.6 / 1.0 / 2.0 points); orders with
no qualifying configuration get a "-" cell.  Plot data comes out as
two-column text files: Pareto front points per pipeline tag and
per-stage trajectory files per configuration.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

from .planner import ParetoPoint, pareto_front
from .results import load_record_docs

ACC_LOSS_THRESHOLDS = (0.2, 0.6, 1.0, 2.0)


def best_ratio_table(docs: list, thresholds: Sequence[float] = ACC_LOSS_THRESHOLDS) -> dict:
    """{pipeline_tag: {threshold: best bitops_cr or None}}."""
    table: dict = {}
    for doc in docs:
        tag = doc["pipeline_tag"] or "BASE"
        cells = table.setdefault(tag, {t: None for t in thresholds})
        base_acc = doc["baseline_accuracy"]
        for outcome in doc["outcomes"]:
            loss = base_acc - outcome["accuracy"]
            for t in thresholds:
                if loss <= t:
                    cur = cells[t]
                    if cur is None or outcome["bitops_cr"] > cur:
                        cells[t] = outcome["bitops_cr"]
    return table


def render_table(table: dict, thresholds: Sequence[float] = ACC_LOSS_THRESHOLDS) -> str:
    header = ["order".ljust(8)] + [f"<={t:g}pt".rjust(10) for t in thresholds]
    lines = ["".join(header)]
    for tag in sorted(table):
        cells = [tag.ljust(8)]
        for t in thresholds:
            v = table[tag][t]
            cells.append(("-" if v is None else f"{v:.1f}x").rjust(10))
        lines.append("".join(cells))
    return "\n".join(lines)


def tag_points(docs: list) -> dict:
    """{pipeline_tag: [ParetoPoint]} over all outcomes."""
    out: dict = {}
    for doc in docs:
        tag = doc["pipeline_tag"] or "BASE"
        for outcome in doc["outcomes"]:
            if outcome["bitops_cr"] <= 0:
                continue
            out.setdefault(tag, []).append(ParetoPoint(
                max(0.0, min(100.0, outcome["accuracy"])), outcome["bitops_cr"],
                outcome["cr"], doc["config_id"], tag))
    return out


def write_report(results_dir, report_dir=None,
                 thresholds: Sequence[float] = ACC_LOSS_THRESHOLDS) -> dict:
    """Builds the table and plot files from a results directory.

    Emits summary_table.txt, front_<tag>.dat (accuracy, log2 bitops_cr)
    and trajectory_<config>.dat (stage, accuracy, bitops_cr) files.
    Returns the table for programmatic use.
    """
    docs = load_record_docs(results_dir)
    report_dir = Path(report_dir) if report_dir is not None else Path(results_dir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    table = best_ratio_table(docs, thresholds)
    (report_dir / "summary_table.txt").write_text(render_table(table, thresholds) + "\n")

    for tag, pts in sorted(tag_points(docs).items()):
        front = pareto_front(pts)
        lines = [f"{p.accuracy!r} {math.log2(p.bitops_cr)!r}" for p in front]
        (report_dir / f"front_{tag}.dat").write_text("\n".join(lines) + "\n")

    for doc in docs:
        lines = []
        for b in doc["boundaries"]:
            lines.append(f"{b['stage']} {b['accuracy']!r} {b['cost']['bitops_cr']!r}")
        (report_dir / f"trajectory_{doc['config_id']}.dat").write_text(
            "\n".join(lines) + "\n")
    return table
