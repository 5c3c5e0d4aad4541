"""Compression pipelines for small neural classifiers.

The package trains toy CNN/MLP classifiers with a minimal reverse-mode
autodiff engine, applies four compression operators (knowledge
distillation, channel pruning, quantization-aware training, early
exits), accounts compute in bit-operations, and compares operator
orderings via Pareto fronts to plan the best stage sequence.
"""

from .autodiff import SgdConfig, Tape, Tensor, backward, sgd_step
from .stages import (
    CompressionStage,
    ExitConfig,
    KdConfig,
    PruneConfig,
    QuantConfig,
    StageKind,
)
from .models import (
    ExitHead,
    Layer,
    LayerSpec,
    ModelGraph,
    attach_exit_heads,
    build_model,
    forward,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .quantizers import fake_quant_acts, fake_quant_weights, quantize_k
from .costs import (
    CostReport,
    compression_ratios,
    cost_report,
    count_bitops,
    count_macs,
    expected_bitops,
    storage_bits,
)
from .planner import (
    CycleError,
    Edge,
    OrderDecision,
    OrderFront,
    ParetoPoint,
    PrecedenceGraph,
    build_dag,
    compare_orders,
    dominates,
    hypervolume,
    pareto_front,
    toposort,
)
from .datasets import SplitData, generate_dataset, read_idx
from .distill import distill, kd_loss
from .prune import prune_channels
from .qat import quantize
from .early_exit import exit_accuracy, predict_with_exits, train_exit_heads
from .repetition import RepetitionReport, evaluate_repetition
from .pipeline import ExperimentConfig, load_config, run_pipeline, train_base_model
from .results import ResultRecord, write_records
from .sweeps import sweep_pairwise, validate_insertion
from .training import evaluate_accuracy, train_classifier

__version__ = "0.1.0"
