"""Uniform channel pruning with residual-group safety.

Every prunable layer loses its floor(ratio * C_out) lowest-importance
output channels (importance = per-channel filter norm); the consuming
layers lose the matching input channels, with flatten block mapping
handled when a dense layer consumes a spatial feature map.  Layers whose
outputs feed a shared residual add are pruned with one common index set
chosen by the summed group importance.  Classifier outputs (final layer
and exit-head classifiers) are never pruned.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .datasets import SplitData
from .models import MAC_KINDS, ModelGraph, clone_model, output_shapes, validate_model
from .stages import PruneConfig
from .training import train_classifier


def _producer_of_output(m: ModelGraph, j: int) -> Optional[int]:
    """The conv/dense layer defining the channel space of layer j's output."""
    while j >= 0:
        if m.layers[j].spec.kind in MAC_KINDS:
            return j
        j -= 1
    return None


def channel_importance(weight: np.ndarray, kind: str, norm: str) -> np.ndarray:
    """Per-output-channel weight norm: conv (F,C,kh,kw) rows, dense (in,out) cols."""
    w = weight if kind == "conv2d" else weight.T
    flat = np.abs(w.reshape(w.shape[0], -1)).astype(np.float64)
    if norm == "l1":
        return flat.sum(axis=1)
    return np.sqrt((flat ** 2).sum(axis=1))


def select_kept_channels(importance: np.ndarray, ratio: float) -> np.ndarray:
    """Indices that survive: drop the floor(ratio*C) least important.

    Ties break toward removing the lower channel index first.
    """
    c = len(importance)
    n_remove = int(math.floor(ratio * c))
    if c - n_remove < 1:
        raise ValueError(f"pruning would empty a layer: {c} channels, remove {n_remove}")
    order = np.argsort(importance, kind="stable")
    return np.sort(order[n_remove:])


def _prunable_groups(m: ModelGraph) -> list:
    """Groups of producer indices pruned with a shared channel set."""
    final = m.final_classifier_index
    grouped = set()
    groups = []
    for g in m.residual_groups:
        groups.append(tuple(g))
        grouped.update(g)
    for i, layer in enumerate(m.layers):
        if layer.spec.kind in MAC_KINDS and i != final and i not in grouped:
            groups.append((i,))
    return groups


def prune_channels(m: ModelGraph, cfg: PruneConfig, data: Optional[SplitData] = None,
                   finetune_lr: float = 0.01, momentum: float = 0.9, seed: int = 0,
                   batch_size: int = 64) -> ModelGraph:
    """Returns a pruned copy of ``m``; the input model is untouched.

    With ``data`` supplied the pruned model is fine-tuned for
    ``cfg.epochs_finetune`` (jointly with any attached exit heads).
    A ratio of zero returns a structurally identical copy.
    """
    groups = _prunable_groups(m)
    if not groups:
        raise ValueError("prune_channels: model has no prunable conv/dense layer")
    shapes = output_shapes(m)
    out = clone_model(m)

    keep_by_producer = {}
    for group in groups:
        imp = None
        for i in group:
            term = channel_importance(m.layers[i].weight.data, m.layers[i].spec.kind,
                                      cfg.importance)
            imp = term if imp is None else imp + term
        keep = select_kept_channels(imp, cfg.ratio)
        for i in group:
            keep_by_producer[i] = keep

    # shrink producer outputs
    for i, keep in keep_by_producer.items():
        layer = out.layers[i]
        if layer.spec.kind == "conv2d":
            layer.weight = Tensor(layer.weight.data[keep].copy(), dtype=None)
            layer.spec.dims["out_channels"] = len(keep)
        else:
            layer.weight = Tensor(layer.weight.data[:, keep].copy(), dtype=None)
            layer.spec.dims["out_features"] = len(keep)
        layer.bias = Tensor(layer.bias.data[keep].copy(), dtype=None)

    # shrink consumer inputs (body layers, then exit-head entry layers)
    def shrink_consumer(layer, producer: int) -> None:
        keep = keep_by_producer.get(producer)
        if keep is None:
            return
        if layer.spec.kind == "conv2d":
            layer.weight = Tensor(layer.weight.data[:, keep].copy(), dtype=None)
            layer.spec.dims["in_channels"] = len(keep)
        else:
            old_channels = shapes[producer][0]
            block = layer.spec.dims["in_features"] // old_channels
            rows = (np.repeat(keep, block) * block
                    + np.tile(np.arange(block), len(keep)))
            layer.weight = Tensor(layer.weight.data[rows].copy(), dtype=None)
            layer.spec.dims["in_features"] = len(keep) * block

    for j, layer in enumerate(out.layers):
        if layer.spec.kind not in MAC_KINDS:
            continue
        producer = _producer_of_output(m, j - 1)
        if producer is not None:
            shrink_consumer(layer, producer)

    for head in out.exit_heads:
        producer = _producer_of_output(m, head.attach_index)
        if producer is None:
            continue
        for layer in head.layers:
            if layer.spec.kind in MAC_KINDS:
                shrink_consumer(layer, producer)
                break

    validate_model(out)

    if data is not None and cfg.epochs_finetune > 0:
        train_classifier(out, data.train_x, data.train_y, cfg.epochs_finetune,
                         learning_rate=finetune_lr, momentum=momentum, seed=seed,
                         batch_size=batch_size, include_heads=bool(out.exit_heads))
    return out
