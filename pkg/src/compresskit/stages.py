"""Stage kinds and per-operator hyperparameter records.

Every compression operator is tagged with a fixed timing (applied once
offline vs. adapting per input at runtime) and a granularity (whole
architecture, whole neurons/channels, or sub-neuron bit precision).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


class StageKind(Enum):
    DISTILL = "D"
    PRUNE = "P"
    QUANTIZE = "Q"
    EARLY_EXIT = "E"

    @property
    def letter(self) -> str:
        return self.value

    @property
    def timing(self) -> str:
        return "dynamic" if self is StageKind.EARLY_EXIT else "static"

    @property
    def granularity(self) -> str:
        return _GRANULARITY[self]

    @property
    def priority(self) -> int:
        """Tie-break rank for topological sorting: D < P < Q < E."""
        return _PRIORITY[self]

    @classmethod
    def from_letter(cls, letter: str) -> "StageKind":
        try:
            return cls(letter.upper())
        except ValueError:
            raise ValueError(f"unknown stage kind {letter!r}; expected one of D, P, Q, E") from None


_GRANULARITY = {
    StageKind.DISTILL: "architecture",
    StageKind.PRUNE: "neuron",
    StageKind.QUANTIZE: "sub_neuron",
    StageKind.EARLY_EXIT: "architecture",
}
_PRIORITY = {k: i for i, k in enumerate(StageKind)}


@dataclass
class KdConfig:
    """Softened-logits distillation into a width-scaled student."""

    temperature: float = 4.0
    alpha: float = 0.3
    student_width_multiplier: float = 0.5
    epochs: int = 15

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"KdConfig: temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"KdConfig: alpha must be in [0, 1], got {self.alpha}")
        if self.student_width_multiplier <= 0:
            raise ValueError("KdConfig: student_width_multiplier must be positive")


@dataclass
class PruneConfig:
    """Uniform channel pruning: drop the same fraction in every prunable layer."""

    ratio: float = 0.3
    importance: str = "l2"
    epochs_finetune: int = 10

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"PruneConfig: ratio must be in [0, 1), got {self.ratio}")
        if self.importance not in ("l1", "l2"):
            raise ValueError(f"PruneConfig: importance must be 'l1' or 'l2', got {self.importance!r}")


@dataclass
class QuantConfig:
    """Fixed-point uniform quantization-aware training bit widths."""

    weight_bits: int = 8
    act_bits: int = 8
    epochs_qat: int = 10

    def __post_init__(self):
        for name, b in (("weight_bits", self.weight_bits), ("act_bits", self.act_bits)):
            if not 1 <= b <= 32:
                raise ValueError(f"QuantConfig: {name} must be in [1, 32], got {b}")


@dataclass
class ExitConfig:
    """Early-exit heads: attach positions and the confidence threshold."""

    positions: tuple = ()
    threshold: float = 0.9
    epochs_heads: int = 8

    def __post_init__(self):
        self.positions = tuple(self.positions)
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"ExitConfig: threshold must be in [0, 1], got {self.threshold}")


StageParams = Union[KdConfig, PruneConfig, QuantConfig, ExitConfig]

_PARAMS_BY_KIND = {
    StageKind.DISTILL: KdConfig,
    StageKind.PRUNE: PruneConfig,
    StageKind.QUANTIZE: QuantConfig,
    StageKind.EARLY_EXIT: ExitConfig,
}


@dataclass
class CompressionStage:
    """One pipeline stage: an operator kind plus its hyperparameters."""

    kind: StageKind
    params: StageParams = None

    def __post_init__(self):
        expected = _PARAMS_BY_KIND[self.kind]
        if self.params is None:
            self.params = expected()
        if not isinstance(self.params, expected):
            raise ValueError(
                f"CompressionStage: {self.kind.name} takes {expected.__name__}, "
                f"got {type(self.params).__name__}")

    @property
    def timing(self) -> str:
        return self.kind.timing

    @property
    def granularity(self) -> str:
        return self.kind.granularity

    def describe(self) -> str:
        p = self.params
        if self.kind is StageKind.DISTILL:
            return f"D(w={p.student_width_multiplier:g},T={p.temperature:g},a={p.alpha:g})"
        if self.kind is StageKind.PRUNE:
            return f"P(r={p.ratio:g},{p.importance})"
        if self.kind is StageKind.QUANTIZE:
            return f"Q({p.weight_bits}w{p.act_bits}a)"
        pos = "+".join(str(i) for i in p.positions) or "auto"
        return f"E(pos={pos})"


def pipeline_tag(stages) -> str:
    """Compact order string for a stage list, e.g. 'DPQE'."""
    return "".join(s.kind.letter for s in stages)
