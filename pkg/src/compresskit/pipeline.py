"""Experiment configuration and pipeline execution.

A pipeline trains a base model, applies compression stages in the given
order (never silently reordered), evaluates accuracy and cost at every
stage boundary, and emits result records.  Distillation and exit-head
training run at the base learning rate; fine-tuning after pruning and
quantization-aware training run at base/10 unless overridden.  Pipelines
containing an early-exit stage fan out into one record per threshold in
the tau grid.
"""

from __future__ import annotations

import hashlib
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .costs import compression_ratios, cost_report, expected_bitops, storage_bits
from .datasets import SplitData, generate_dataset
from .distill import distill
from .early_exit import exit_accuracy, train_exit_heads
from .models import ModelGraph, build_model, default_exit_positions
from .prune import prune_channels
from .qat import quantize
from .results import BoundarySnapshot, ResultRecord
from .stages import (
    CompressionStage,
    ExitConfig,
    KdConfig,
    PruneConfig,
    QuantConfig,
    StageKind,
    pipeline_tag,
)
from .training import evaluate_accuracy, train_classifier

# threshold sweep for early-exit records; the final value is the
# never-exit sentinel (any value above 1 means "always run to the end")
DEFAULT_TAU_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.5)
TAU_NEVER = 1.5


@dataclass
class ExperimentConfig:
    dataset_name: str = "synthetic_shapes"
    dataset_params: dict = field(default_factory=lambda: {
        "classes": 4, "image_size": 16, "samples": 4000, "noise_sigma": 0.1})
    dataset_seed: int = 0
    arch: str = "toy_cnn"
    width: float = 1.0
    stages: list = field(default_factory=list)
    base_epochs: int = 30
    base_lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    seeds: tuple = (0,)
    tau_grid: tuple = DEFAULT_TAU_GRID
    out_dir: str = "results"
    override_finetune_lr: Optional[float] = None
    allow_repeats: bool = False

    def __post_init__(self):
        self.seeds = tuple(self.seeds)
        self.tau_grid = tuple(self.tau_grid)
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        kinds = [s.kind for s in self.stages]
        if not self.allow_repeats and len(set(kinds)) != len(kinds):
            raise ValueError(
                "stage list repeats a kind; set allow_repeats for repetition studies")

    @property
    def finetune_lr(self) -> float:
        if self.override_finetune_lr is not None:
            return self.override_finetune_lr
        return self.base_lr / 10.0

    def make_dataset(self) -> SplitData:
        return generate_dataset(self.dataset_name, self.dataset_params,
                                seed=self.dataset_seed)


def config_id(cfg: ExperimentConfig, stages: Sequence[CompressionStage], seed: int) -> str:
    tag = pipeline_tag(stages)
    params = ";".join(s.describe() for s in stages) or "none"
    digest = hashlib.sha1(
        f"{cfg.arch}|{cfg.width}|{cfg.dataset_name}|{sorted(cfg.dataset_params.items())}|"
        f"{params}|{cfg.base_epochs}|{cfg.base_lr}".encode()).hexdigest()[:8]
    return f"{tag or 'BASE'}-{digest}-s{seed}"


def train_base_model(cfg: ExperimentConfig, data: SplitData, seed: int) -> ModelGraph:
    model = build_model(cfg.arch, cfg.width, num_classes=data.num_classes, seed=seed,
                        input_shape=data.input_shape)
    train_classifier(model, data.train_x, data.train_y, cfg.base_epochs,
                     learning_rate=cfg.base_lr, momentum=cfg.momentum, seed=seed,
                     batch_size=cfg.batch_size)
    return model


def apply_stage(model: ModelGraph, stage: CompressionStage, cfg: ExperimentConfig,
                data: SplitData, seed: int) -> ModelGraph:
    """Runs one operator with the protocol's learning-rate rules."""
    kind = stage.kind
    if kind is StageKind.DISTILL:
        return distill(model, stage.params, data, learning_rate=cfg.base_lr,
                       momentum=cfg.momentum, seed=seed, batch_size=cfg.batch_size)
    if kind is StageKind.PRUNE:
        return prune_channels(model, stage.params, data, finetune_lr=cfg.finetune_lr,
                              momentum=cfg.momentum, seed=seed, batch_size=cfg.batch_size)
    if kind is StageKind.QUANTIZE:
        return quantize(model, stage.params, data, finetune_lr=cfg.finetune_lr,
                        momentum=cfg.momentum, seed=seed, batch_size=cfg.batch_size)
    if kind is StageKind.EARLY_EXIT:
        params = stage.params
        if not model.exit_heads and not params.positions:
            params = replace(params, positions=tuple(default_exit_positions(model)))
        return train_exit_heads(model, params, data, learning_rate=cfg.base_lr,
                                momentum=cfg.momentum, seed=seed,
                                batch_size=cfg.batch_size)
    raise ValueError(f"unknown stage kind {kind!r}")


def run_pipeline(cfg: ExperimentConfig, seed: int,
                 data: Optional[SplitData] = None,
                 base_model: Optional[ModelGraph] = None,
                 stages: Optional[Sequence[CompressionStage]] = None) -> list:
    """Executes one pipeline end to end and returns its result records.

    ``data`` and ``base_model`` may be supplied to reuse work across
    configurations of a sweep (the base model must match cfg and seed).
    """
    t0 = time.monotonic()
    stages = list(cfg.stages if stages is None else stages)
    data = data or cfg.make_dataset()
    model = base_model if base_model is not None else train_base_model(cfg, data, seed)
    original = model

    cid = config_id(cfg, stages, seed)
    tag = pipeline_tag(stages)
    params_desc = ";".join(s.describe() for s in stages) or "none"

    baseline_acc = evaluate_accuracy(model, data.test_x, data.test_y)
    boundaries = [BoundarySnapshot("base", baseline_acc, cost_report(model, original))]

    for k, stage in enumerate(stages):
        try:
            model = apply_stage(model, stage, cfg, data, seed)
        except ValueError as exc:
            raise ValueError(f"stage {k} ({stage.kind.name}): {exc}") from exc
        if model.exit_heads:
            acc = evaluate_accuracy(model, data.test_x, data.test_y)
            report = cost_report(model, original, data.test_x, TAU_NEVER)
        else:
            acc = evaluate_accuracy(model, data.test_x, data.test_y)
            report = cost_report(model, original)
        boundaries.append(BoundarySnapshot(stage.kind.letter, acc, report))

    wall = time.monotonic() - t0
    records = []
    common = dict(config_id=cid, pipeline_tag=tag, stage_params=params_desc, seed=seed,
                  baseline_accuracy=baseline_acc, finetune_lr=cfg.finetune_lr,
                  boundaries=boundaries, metadata={"wall_time_s": round(wall, 3)})
    if model.exit_heads:
        for tau in cfg.tau_grid:
            acc = exit_accuracy(model, data.test_x, data.test_y, tau)
            bitops_cr, cr = compression_ratios(original, model, data.test_x, tau)
            expected, _ = expected_bitops(model, data.test_x, tau)
            records.append(ResultRecord(
                tau=tau, accuracy=acc, bitops_cr=bitops_cr, cr=cr,
                storage_bits=storage_bits(model), expected_bitops=expected, **common))
    else:
        acc = evaluate_accuracy(model, data.test_x, data.test_y)
        bitops_cr, cr = compression_ratios(original, model)
        records.append(ResultRecord(
            tau=None, accuracy=acc, bitops_cr=bitops_cr, cr=cr,
            storage_bits=storage_bits(model),
            expected_bitops=float(boundaries[-1].cost.bitops_static), **common))
    return records


# ---------------------------------------------------------------------------
# TOML configuration files


_STAGE_PARAMS = {
    StageKind.DISTILL: KdConfig,
    StageKind.PRUNE: PruneConfig,
    StageKind.QUANTIZE: QuantConfig,
    StageKind.EARLY_EXIT: ExitConfig,
}


def stage_from_dict(d: dict) -> CompressionStage:
    kind = StageKind.from_letter(str(d["kind"]))
    fields = {k: v for k, v in d.items() if k != "kind"}
    if kind is StageKind.EARLY_EXIT and "positions" in fields:
        fields["positions"] = tuple(fields["positions"])
    return CompressionStage(kind, _STAGE_PARAMS[kind](**fields))


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Reads an experiment config from a TOML file.

    Recognized tables: [dataset], [model], [training], [output], and an
    array of [[stage]] tables applied in file order.
    """
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    ds = doc.get("dataset", {})
    model = doc.get("model", {})
    training = doc.get("training", {})
    output = doc.get("output", {})
    kwargs: dict = {}
    if ds:
        kwargs["dataset_name"] = ds.get("name", "synthetic_shapes")
        kwargs["dataset_params"] = {k: v for k, v in ds.items()
                                    if k not in ("name", "seed")}
        kwargs["dataset_seed"] = ds.get("seed", 0)
    if model:
        kwargs["arch"] = model.get("arch", "toy_cnn")
        kwargs["width"] = model.get("width", 1.0)
    for key in ("base_epochs", "base_lr", "momentum", "batch_size", "seeds",
                "tau_grid", "override_finetune_lr", "allow_repeats"):
        if key in training:
            kwargs[key] = training[key]
    if "dir" in output:
        kwargs["out_dir"] = output["dir"]
    kwargs["stages"] = [stage_from_dict(d) for d in doc.get("stage", [])]
    if overrides:
        kwargs.update(overrides)
    return ExperimentConfig(**kwargs)
