"""Shared minibatch SGD loops and accuracy evaluation.

One generic loop drives plain training, distillation, QAT and head
training; callers supply the parameter list and a loss builder.  Runs
are deterministic for a given seed: shuffling comes from a dedicated
numpy Generator and updates are plain SGD with momentum.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import SgdConfig, Tape, Tensor, backward, sgd_step, zero_grads
from .models import ModelGraph, forward


def evaluate_accuracy(m: ModelGraph, x: np.ndarray, y: np.ndarray,
                      batch_size: int = 256) -> float:
    """Top-1 accuracy in percent on the final classifier (heads ignored)."""
    if len(x) == 0:
        raise ValueError("evaluate_accuracy: empty dataset")
    hits = 0
    for lo in range(0, len(x), batch_size):
        logits = forward(m, x[lo:lo + batch_size])
        hits += int((logits.data.argmax(axis=1) == y[lo:lo + batch_size]).sum())
    return 100.0 * hits / len(x)


def run_training(params: Sequence[Tensor],
                 loss_builder: Callable[[np.ndarray, np.ndarray, Tape], Tensor],
                 x: np.ndarray, y: np.ndarray, epochs: int, cfg: SgdConfig,
                 batch_size: int = 64) -> list:
    """Generic SGD loop; returns the per-epoch mean training loss."""
    if epochs <= 0 or len(x) == 0:
        return []
    rng = np.random.default_rng(cfg.seed)
    velocity = None
    history = []
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            tape = Tape()
            loss = loss_builder(x[idx], y[idx], tape)
            zero_grads(params)
            grads = backward(tape, loss, params)
            _, velocity = sgd_step(params, grads, cfg, velocity)
            total += float(loss.data) * len(idx)
        history.append(total / n)
    return history


def train_classifier(m: ModelGraph, x: np.ndarray, y: np.ndarray, epochs: int,
                     learning_rate: float, momentum: float = 0.9, seed: int = 0,
                     batch_size: int = 64,
                     include_heads: bool = False) -> list:
    """Cross-entropy training of the body (optionally jointly with heads).

    With ``include_heads`` the loss is the final cross-entropy plus the sum
    of the per-head cross-entropies, and head parameters train too.
    """
    from . import autodiff as ad

    params = m.parameters() if include_heads else m.body_parameters()
    cfg = SgdConfig(learning_rate=learning_rate, momentum=momentum, seed=seed)

    if include_heads and m.exit_heads:
        def loss_builder(xb, yb, tape):
            logits, head_logits = forward(m, xb, tape, with_heads=True)
            loss = ad.cross_entropy(logits, yb, tape)
            for hl in head_logits:
                loss = ad.add(loss, ad.cross_entropy(hl, yb, tape), tape)
            return loss
    else:
        def loss_builder(xb, yb, tape):
            return ad.cross_entropy(forward(m, xb, tape), yb, tape)

    return run_training(params, loss_builder, x, y, epochs, cfg, batch_size)
