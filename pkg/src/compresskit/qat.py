"""Model-level quantization with straight-through fine-tuning.

Sets per-layer bit widths (first and last layers included, same as every
other layer) and fine-tunes with the fake-quantized forward pass.  A
model that already carries exit heads is fine-tuned jointly with them,
so the heads adapt to quantized activations; heads created after
quantization instead train from scratch under QAT (see
``early_exit.train_exit_heads``).
"""

from __future__ import annotations

from typing import Optional

from .datasets import SplitData
from .models import ModelGraph, clone_model
from .stages import QuantConfig
from .training import train_classifier


def quantize(m: ModelGraph, cfg: QuantConfig, data: Optional[SplitData] = None,
             finetune_lr: float = 0.01, momentum: float = 0.9, seed: int = 0,
             batch_size: int = 64) -> ModelGraph:
    """Returns a quantized copy of ``m``; the input model is untouched.

    With ``data`` supplied, runs ``cfg.epochs_qat`` of quantization-aware
    fine-tuning (including any attached exit heads).
    """
    out = clone_model(m)
    for layer in out.layers:
        layer.spec.weight_bits = cfg.weight_bits
        layer.spec.act_bits = cfg.act_bits
    for head in out.exit_heads:
        for layer in head.layers:
            layer.spec.weight_bits = cfg.weight_bits
            layer.spec.act_bits = cfg.act_bits
    if data is not None and cfg.epochs_qat > 0:
        train_classifier(out, data.train_x, data.train_y, cfg.epochs_qat,
                         learning_rate=finetune_lr, momentum=momentum, seed=seed,
                         batch_size=batch_size, include_heads=bool(out.exit_heads))
    return out
