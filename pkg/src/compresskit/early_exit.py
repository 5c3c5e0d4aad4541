"""Early-exit heads: frozen-body training and thresholded inference.

Heads train by cross-entropy on the body's cached activations (the body
never changes, so activations are computed once).  A body with quantized
layers hands the heads its bit widths, so freshly attached heads do QAT
from scratch.  At inference a sample exits at the first head whose top
softmax probability reaches the threshold; a threshold above 1 never
exits early and the final classifier always answers.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import SgdConfig, Tape, Tensor, backward, sgd_step, zero_grads
from .datasets import SplitData
from .models import (
    ModelGraph,
    attach_exit_heads,
    clone_model,
    default_exit_positions,
    forward,
    head_forward,
)
from .stages import ExitConfig


def _cached_body_activations(m: ModelGraph, x: np.ndarray, batch_size: int = 256) -> dict:
    attach = [h.attach_index for h in m.exit_heads]
    chunks: dict = {i: [] for i in attach}
    for lo in range(0, len(x), batch_size):
        _, acts = forward(m, x[lo:lo + batch_size], collect=attach)
        for i in attach:
            chunks[i].append(acts[i].data)
    return {i: np.concatenate(parts) for i, parts in chunks.items()}


def train_exit_heads(m: ModelGraph, cfg: ExitConfig, data: SplitData,
                     learning_rate: float = 0.1, momentum: float = 0.9, seed: int = 0,
                     batch_size: int = 64) -> ModelGraph:
    """Returns a copy of ``m`` with trained heads; body parameters frozen.

    Attaches heads at ``cfg.positions`` when the model has none (rejected
    if neither positions nor attached heads exist).
    """
    if m.exit_heads:
        out = clone_model(m)
    elif cfg.positions:
        out = attach_exit_heads(m, cfg.positions, seed=seed)
    else:
        raise ValueError("train_exit_heads: no attached heads and no positions given")
    if cfg.epochs_heads <= 0:
        return out

    x, y = data.train_x, data.train_y
    cached = _cached_body_activations(out, x)
    params = out.head_parameters()
    sgd = SgdConfig(learning_rate=learning_rate, momentum=momentum, seed=seed)
    velocity = None
    rng = np.random.default_rng(seed)
    n = len(x)
    for _ in range(cfg.epochs_heads):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            rows = order[lo:lo + batch_size]
            tape = Tape()
            loss = None
            for head in out.exit_heads:
                act = Tensor(cached[head.attach_index][rows], dtype=None)
                logits = head_forward(head, act, tape)
                term = ad.cross_entropy(logits, y[rows], tape)
                loss = term if loss is None else ad.add(loss, term, tape)
            zero_grads(params)
            grads = backward(tape, loss, params)
            _, velocity = sgd_step(params, grads, sgd, velocity)
    return out


def predict_with_exits(m: ModelGraph, x: np.ndarray, tau: float,
                       batch_size: int = 256) -> tuple:
    """Thresholded inference over a batch.

    Returns (classes, exit_index) arrays; exit_index counts heads in
    attach order, with len(heads) meaning the final classifier answered.
    """
    n_heads = len(m.exit_heads)
    classes = np.empty(len(x), dtype=np.int64)
    exit_idx = np.empty(len(x), dtype=np.int64)
    for lo in range(0, len(x), batch_size):
        xb = x[lo:lo + batch_size]
        logits, head_logits = forward(m, xb, with_heads=True)
        nb = len(xb)
        chosen = np.full(nb, n_heads, dtype=np.int64)
        pred = logits.data.argmax(axis=1)
        for k in range(n_heads - 1, -1, -1):
            z = head_logits[k].data
            z = z - z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            confident = p.max(axis=1) >= tau
            chosen = np.where(confident, k, chosen)
            pred = np.where(confident, z.argmax(axis=1), pred)
        classes[lo:lo + batch_size] = pred
        exit_idx[lo:lo + batch_size] = chosen
    return classes, exit_idx


def exit_accuracy(m: ModelGraph, x: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Top-1 accuracy in percent under early-exit inference."""
    classes, _ = predict_with_exits(m, x, tau)
    return 100.0 * float((classes == y).mean())
