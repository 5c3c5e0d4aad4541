"""Knowledge distillation into a width-scaled student.

The student minimizes alpha * CE(labels) + (1 - alpha) * T^2 *
KL(teacher_T || student_T) with both distributions softened at
temperature T.  The student copies the teacher's layer structure at a
reduced width, inheriting bit widths (a quantized teacher distills into
a quantized student trained with QAT).  When the teacher carries trained
exit heads, the student gets heads at the same attach points and each
student head distills from the teacher head at the same depth.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import SgdConfig, Tape, Tensor, backward, sgd_step, zero_grads
from .datasets import SplitData
from .models import ModelGraph, attach_exit_heads, forward, scale_model_arch
from .stages import KdConfig
from .training import evaluate_accuracy


def _soft_targets(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits.astype(np.float64) / temperature
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def kd_loss(student_logits: Tensor, teacher_probs: np.ndarray, labels: np.ndarray,
            temperature: float, alpha: float, tape: Tape) -> Tensor:
    """Distillation objective; alpha == 1 reduces exactly to cross-entropy."""
    ce = ad.cross_entropy(student_logits, labels, tape)
    if alpha == 1.0:
        return ce
    n = student_logits.data.shape[0]
    logq = ad.log_softmax(ad.affine(student_logits, 1.0 / temperature, 0.0, tape), tape)
    p = teacher_probs.astype(student_logits.data.dtype)
    cross = ad.sum_all(ad.mul_const(logq, p, tape), tape)
    # KL(p||q) = sum p log p - sum p log q; the entropy term is constant
    entropy = float(np.sum(teacher_probs * np.log(np.maximum(teacher_probs, 1e-30))))
    kl = ad.affine(cross, -1.0 / n, entropy / n, tape)
    scaled_kl = ad.affine(kl, (1.0 - alpha) * temperature * temperature, 0.0, tape)
    if alpha == 0.0:
        return scaled_kl
    return ad.add(ad.affine(ce, alpha, 0.0, tape), scaled_kl, tape)


def _teacher_outputs(teacher: ModelGraph, x: np.ndarray, batch_size: int = 256):
    """Full-dataset teacher logits (and head logits), computed once."""
    outs = []
    head_outs = [[] for _ in teacher.exit_heads]
    for lo in range(0, len(x), batch_size):
        if teacher.exit_heads:
            logits, head_logits = forward(teacher, x[lo:lo + batch_size], with_heads=True)
            for k, hl in enumerate(head_logits):
                head_outs[k].append(hl.data)
        else:
            logits = forward(teacher, x[lo:lo + batch_size])
        outs.append(logits.data)
    return np.concatenate(outs), [np.concatenate(h) for h in head_outs]


def distill(teacher: ModelGraph, cfg: KdConfig, data: SplitData,
            learning_rate: float = 0.1, momentum: float = 0.9, seed: int = 0,
            batch_size: int = 64) -> ModelGraph:
    """Trains and returns a fresh student; the teacher is never mutated.

    A teacher at or below chance-plus-5-points validation accuracy is
    suspicious (likely untrained) and triggers a warning, not an error.
    """
    val_acc = evaluate_accuracy(teacher, data.val_x, data.val_y)
    if val_acc <= data.chance_accuracy + 5.0:
        warnings.warn(
            f"distill: teacher validation accuracy {val_acc:.1f}% is within 5 points "
            f"of chance ({data.chance_accuracy:.1f}%); distilling from an apparently "
            f"untrained teacher", stacklevel=2)

    student = scale_model_arch(teacher, cfg.student_width_multiplier, seed=seed + 1)
    if teacher.exit_heads:
        student = attach_exit_heads(
            student, [h.attach_index for h in teacher.exit_heads], seed=seed + 2)

    x, y = data.train_x, data.train_y
    t_logits, t_head_logits = _teacher_outputs(teacher, x)
    t_probs = _soft_targets(t_logits, cfg.temperature)
    t_head_probs = [_soft_targets(h, cfg.temperature) for h in t_head_logits]

    sgd = SgdConfig(learning_rate=learning_rate, momentum=momentum, seed=seed)
    params = student.parameters()
    velocity = None
    rng = np.random.default_rng(seed)
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            rows = order[lo:lo + batch_size]
            tape = Tape()
            if student.exit_heads:
                logits, head_logits = forward(student, x[rows], tape, with_heads=True)
                loss = kd_loss(logits, t_probs[rows], y[rows], cfg.temperature,
                               cfg.alpha, tape)
                for k, hl in enumerate(head_logits):
                    hloss = kd_loss(hl, t_head_probs[k][rows], y[rows],
                                    cfg.temperature, cfg.alpha, tape)
                    loss = ad.add(loss, hloss, tape)
            else:
                logits = forward(student, x[rows], tape)
                loss = kd_loss(logits, t_probs[rows], y[rows], cfg.temperature,
                               cfg.alpha, tape)
            zero_grads(params)
            grads = backward(tape, loss, params)
            _, velocity = sgd_step(params, grads, sgd, velocity)
    return student
