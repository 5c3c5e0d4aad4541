"""Does applying a compression stage twice beat applying it once, harder?

For a repeatable stage the evaluator produces trade-off points for three
arms: (a) the stage applied twice at moderate strength, (b) the stage
applied once at an aggressive strength reaching the same nominal
compression, and (c) a base pipeline with one extra repetition appended.
The report carries data only; it renders no verdict.  Early exit adapts
per input at inference time, so there is nothing to re-apply: repetition
requests for it are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .datasets import SplitData
from .pipeline import ExperimentConfig, run_pipeline, train_base_model
from .planner import ParetoPoint
from .stages import CompressionStage, ExitConfig, KdConfig, PruneConfig, QuantConfig, StageKind

# moderate strengths compose to the aggressive single-shot strength:
# width 0.7 twice ~ 0.49 once; keep 0.7 twice ~ keep 0.49 once;
# 8 bits then 6 bits ends on the same grid as 6 bits directly
MODERATE = {
    StageKind.DISTILL: (KdConfig(student_width_multiplier=0.7),
                        KdConfig(student_width_multiplier=0.7)),
    StageKind.PRUNE: (PruneConfig(ratio=0.3), PruneConfig(ratio=0.3)),
    StageKind.QUANTIZE: (QuantConfig(weight_bits=8, act_bits=8),
                         QuantConfig(weight_bits=6, act_bits=6)),
}
AGGRESSIVE = {
    StageKind.DISTILL: KdConfig(student_width_multiplier=0.49),
    StageKind.PRUNE: PruneConfig(ratio=0.51),
    StageKind.QUANTIZE: QuantConfig(weight_bits=6, act_bits=6),
}


@dataclass
class RepetitionReport:
    stage_kind: StageKind
    arms: dict = field(default_factory=dict)      # arm name -> [ParetoPoint]
    records: dict = field(default_factory=dict)   # arm name -> [ResultRecord]
    base_tag: str = ""


def _points(records) -> list:
    return [ParetoPoint(r.accuracy, r.bitops_cr, r.cr, r.config_id, r.pipeline_tag)
            for r in records]


def evaluate_repetition(cfg: ExperimentConfig, stage_kind: StageKind,
                        base_stages: Optional[Sequence[CompressionStage]] = None,
                        data: Optional[SplitData] = None, seed: int = 0) -> RepetitionReport:
    """Runs the three repetition arms for one stage kind.

    ``base_stages`` defaults to cfg.stages and feeds arm (c); pass an
    empty base to skip that arm.
    """
    if stage_kind is StageKind.EARLY_EXIT:
        raise ValueError(
            "repetition of EarlyExit rejected: a dynamic stage acts at inference "
            "time per input and cannot be applied twice")
    if stage_kind not in MODERATE:
        raise ValueError(f"repetition study does not cover stage kind {stage_kind!r}")

    data = data or cfg.make_dataset()
    base_model = train_base_model(cfg, data, seed)
    run_cfg = replace(cfg, allow_repeats=True, stages=[])

    mod_a, mod_b = MODERATE[stage_kind]
    arms = {
        "twice_moderate": [CompressionStage(stage_kind, mod_a),
                           CompressionStage(stage_kind, mod_b)],
        "once_aggressive": [CompressionStage(stage_kind, AGGRESSIVE[stage_kind])],
    }
    base_stages = list(cfg.stages if base_stages is None else base_stages)
    if base_stages:
        arms["base_plus_repeat"] = base_stages + [CompressionStage(stage_kind, mod_b)]

    report = RepetitionReport(stage_kind=stage_kind,
                              base_tag="".join(s.kind.letter for s in base_stages))
    for name, stages in arms.items():
        records = run_pipeline(run_cfg, seed, data=data, base_model=base_model,
                               stages=stages)
        report.records[name] = records
        report.arms[name] = _points(records)
    return report
