"""Hyperparameter sweeps that decide pairwise stage ordering.

For a stage pair (X, Y) the sweep runs both orders over a grid of
hyperparameter combinations, turns every outcome into an
accuracy/compression point, extracts per-seed Pareto fronts anchored at
(chance accuracy, ratio 1), and compares hypervolumes.  The per-seed
edge decisions aggregate by majority.  Points that fail to beat the
reference (below-chance accuracy or expansion instead of compression)
carry no ordering information and are dropped before the comparison.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datasets import SplitData
from .pipeline import ExperimentConfig, run_pipeline, train_base_model
from .planner import Edge, OrderDecision, OrderFront, ParetoPoint, compare_orders, pareto_front
from .results import write_decisions, write_records
from .stages import (
    CompressionStage,
    ExitConfig,
    KdConfig,
    PruneConfig,
    QuantConfig,
    StageKind,
)

DEFAULT_WIDTH_GRID = (0.25, 0.5, 0.75)
DEFAULT_RATIO_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
DEFAULT_BITS_GRID = (2, 3, 4, 6, 8)


def stage_grid(kind: StageKind, epochs: Optional[int] = None) -> list:
    """Default hyperparameter grid for one stage kind."""
    if kind is StageKind.DISTILL:
        out = [KdConfig(student_width_multiplier=w) for w in DEFAULT_WIDTH_GRID]
        if epochs is not None:
            out = [replace(c, epochs=epochs) for c in out]
        return out
    if kind is StageKind.PRUNE:
        out = [PruneConfig(ratio=r) for r in DEFAULT_RATIO_GRID]
        if epochs is not None:
            out = [replace(c, epochs_finetune=epochs) for c in out]
        return out
    if kind is StageKind.QUANTIZE:
        out = [QuantConfig(weight_bits=b, act_bits=b) for b in DEFAULT_BITS_GRID]
        if epochs is not None:
            out = [replace(c, epochs_qat=epochs) for c in out]
        return out
    if kind is StageKind.EARLY_EXIT:
        out = [ExitConfig()]
        if epochs is not None:
            out = [replace(c, epochs_heads=epochs) for c in out]
        return out
    raise ValueError(f"unknown stage kind {kind!r}")


def pair_grid(kind_x: StageKind, kind_y: StageKind, n_configs: Optional[int] = None,
              stage_epochs: Optional[dict] = None) -> list:
    """Cross product of the two stages' grids, evenly thinned to n_configs."""
    if kind_x is kind_y:
        raise ValueError("pairwise sweep needs two distinct stage kinds")
    epochs = stage_epochs or {}
    gx = stage_grid(kind_x, epochs.get(kind_x))
    gy = stage_grid(kind_y, epochs.get(kind_y))
    combos = [(px, py) for px in gx for py in gy]
    if n_configs is not None and n_configs < len(combos):
        idx = np.linspace(0, len(combos) - 1, n_configs).round().astype(int)
        combos = [combos[i] for i in sorted(set(idx.tolist()))]
    return combos


def qualifying_points(records, ref_accuracy: float) -> list:
    """Trade-off points that weakly dominate the reference corner."""
    pts = []
    for r in records:
        if r.accuracy >= ref_accuracy and r.bitops_cr >= 1.0:
            pts.append(ParetoPoint(r.accuracy, r.bitops_cr, r.cr, r.config_id,
                                   r.pipeline_tag))
    return pts


@dataclass
class PairSweepResult:
    kind_x: StageKind
    kind_y: StageKind
    ref_accuracy: float
    per_seed: dict = field(default_factory=dict)     # seed -> OrderDecision
    fronts: dict = field(default_factory=dict)       # (tag, seed) -> OrderFront
    records: list = field(default_factory=list)
    aggregate_edge: Optional[Edge] = None

    @property
    def tag_xy(self) -> str:
        return self.kind_x.letter + self.kind_y.letter

    @property
    def tag_yx(self) -> str:
        return self.kind_y.letter + self.kind_x.letter

    def decision_summary(self) -> str:
        if self.aggregate_edge is None:
            return f"{self.tag_xy} vs {self.tag_yx}: inconclusive"
        return (f"{self.tag_xy} vs {self.tag_yx}: {self.aggregate_edge} "
                f"(margin {self.aggregate_edge.margin:.3f})")


def _majority_edge(decisions: Sequence[OrderDecision]) -> Optional[Edge]:
    votes: dict = {}
    for d in decisions:
        if d.edge is not None:
            key = (d.edge.before, d.edge.after)
            votes.setdefault(key, []).append(d.edge.margin)
    if not votes:
        return None
    best, margins = max(votes.items(), key=lambda kv: len(kv[1]))
    if len(margins) * 2 <= len(decisions):
        return None
    finite = [m for m in margins if math.isfinite(m)]
    return Edge(best[0], best[1], float(np.mean(finite)) if finite else math.inf)


def _run_order(args):
    cfg, seed, order_stages, data, base_model = args
    return run_pipeline(cfg, seed, data=data, base_model=base_model, stages=order_stages)


def sweep_pairwise(cfg: ExperimentConfig, kind_x: StageKind, kind_y: StageKind,
                   n_configs: Optional[int] = 20, margin: float = 0.05,
                   stage_epochs: Optional[dict] = None, out_dir=None,
                   workers: int = 1, data: Optional[SplitData] = None) -> PairSweepResult:
    """Runs both orders of a stage pair over the grid and decides precedence."""
    data = data or cfg.make_dataset()
    combos = pair_grid(kind_x, kind_y, n_configs, stage_epochs)
    result = PairSweepResult(kind_x, kind_y, ref_accuracy=data.chance_accuracy)

    for seed in cfg.seeds:
        base = train_base_model(cfg, data, seed)
        jobs = []
        for px, py in combos:
            jobs.append((cfg, seed, [CompressionStage(kind_x, px),
                                     CompressionStage(kind_y, py)], data, base))
            jobs.append((cfg, seed, [CompressionStage(kind_y, py),
                                     CompressionStage(kind_x, px)], data, base))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_order, jobs))
        else:
            outcomes = [_run_order(j) for j in jobs]
        seed_records = [r for recs in outcomes for r in recs]
        result.records.extend(seed_records)

        fronts = {}
        for order, tag in (((kind_x, kind_y), result.tag_xy),
                           ((kind_y, kind_x), result.tag_yx)):
            pts = qualifying_points([r for r in seed_records if r.pipeline_tag == tag
                                     and r.seed == seed], data.chance_accuracy)
            fronts[tag] = OrderFront(order=order, points=pareto_front(pts) if pts else [],
                                    ref_accuracy=data.chance_accuracy, ref_log_cr=0.0)
            result.fronts[(tag, seed)] = fronts[tag]
        result.per_seed[seed] = compare_orders(fronts[result.tag_xy],
                                               fronts[result.tag_yx], margin)

    result.aggregate_edge = _majority_edge(list(result.per_seed.values()))
    if out_dir is not None:
        _persist_pair(result, out_dir)
    return result


def _persist_pair(result: PairSweepResult, out_dir) -> None:
    out_dir = Path(out_dir)
    write_records(result.records, out_dir)
    agg = []
    if result.aggregate_edge is not None:
        e = result.aggregate_edge
        agg.append((result.kind_x.letter, result.kind_y.letter,
                    (e.before.letter, e.after.letter), e.margin))
    else:
        agg.append((result.kind_x.letter, result.kind_y.letter, None, 0.0))
    samples = []
    for seed, dec in result.per_seed.items():
        label = str(dec.edge) if dec.edge is not None else "inconclusive"
        samples.append((result.tag_xy + "/" + result.tag_yx, seed, label,
                        dec.hv_first, dec.hv_second))
    write_decisions(out_dir / "decisions.txt", agg, samples)
    for (tag, seed), front in result.fronts.items():
        lines = [f"{p.accuracy!r} {p.log2_bitops_cr!r}" for p in front.points]
        (out_dir / f"front_{tag}_seed{seed}.dat").write_text("\n".join(lines) + "\n")


@dataclass
class InsertionReport:
    outer: tuple
    inserted: StageKind
    pairwise_edge: Optional[Edge]
    per_seed: dict = field(default_factory=dict)
    aggregate_edge: Optional[Edge] = None

    @property
    def consistent(self) -> Optional[bool]:
        if self.pairwise_edge is None or self.aggregate_edge is None:
            return None
        return ((self.pairwise_edge.before, self.pairwise_edge.after)
                == (self.aggregate_edge.before, self.aggregate_edge.after))


def validate_insertion(cfg: ExperimentConfig, outer: tuple, inserted: StageKind,
                       pairwise_edge: Optional[Edge] = None,
                       n_configs: Optional[int] = 20, margin: float = 0.05,
                       stage_epochs: Optional[dict] = None, out_dir=None,
                       data: Optional[SplitData] = None) -> InsertionReport:
    """Checks that inserting a stage between a pair preserves its ordering.

    Runs X[Z]Y against Y[Z]X with Z fixed at moderate strength.  When no
    ``pairwise_edge`` is supplied, the plain pairwise sweep runs first to
    establish it.
    """
    kind_x, kind_y = outer
    if inserted in (kind_x, kind_y):
        raise ValueError("inserted stage must differ from both outer stages")
    data = data or cfg.make_dataset()
    if pairwise_edge is None:
        pair = sweep_pairwise(cfg, kind_x, kind_y, n_configs, margin, stage_epochs,
                              data=data)
        pairwise_edge = pair.aggregate_edge

    epochs = (stage_epochs or {}).get(inserted)
    mid_grid = stage_grid(inserted, epochs)
    mid = mid_grid[len(mid_grid) // 2]
    combos = pair_grid(kind_x, kind_y, n_configs, stage_epochs)

    report = InsertionReport(outer=(kind_x, kind_y), inserted=inserted,
                             pairwise_edge=pairwise_edge)
    records = []
    for seed in cfg.seeds:
        base = train_base_model(cfg, data, seed)
        fronts = {}
        for order in ((kind_x, inserted, kind_y), (kind_y, inserted, kind_x)):
            tag = "".join(k.letter for k in order)
            recs = []
            for px, py in combos:
                by_kind = {kind_x: px, kind_y: py, inserted: mid}
                stages = [CompressionStage(k, by_kind[k]) for k in order]
                recs.extend(run_pipeline(cfg, seed, data=data, base_model=base,
                                         stages=stages))
            records.extend(recs)
            pts = qualifying_points(recs, data.chance_accuracy)
            fronts[tag] = OrderFront(order=order, points=pareto_front(pts) if pts else [],
                                    ref_accuracy=data.chance_accuracy, ref_log_cr=0.0)
        tags = list(fronts)
        report.per_seed[seed] = compare_orders(fronts[tags[0]], fronts[tags[1]], margin)
    report.aggregate_edge = _majority_edge(list(report.per_seed.values()))
    if out_dir is not None:
        write_records(records, out_dir)
    return report
