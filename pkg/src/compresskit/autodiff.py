"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

The engine records primitive operations on an explicit :class:`Tape` in
execution order (which is already a topological order of the computation
graph), so the backward pass is a single reverse sweep that visits each
recorded node exactly once.  Tapes are passed explicitly rather than kept
in global state, so independent training runs can execute concurrently.

Values are stored as 32-bit floats by default; passing float64 arrays in
keeps the whole graph in float64, which the gradient-check tests exploit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32


class Tensor:
    """A dense array plus the gradient accumulated by the last backward pass."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=DTYPE):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward_fn: Callable


class Tape:
    """Ordered record of primitive operations for one forward computation."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        self.nodes.append(_Node(out, tuple(inputs), backward_fn))

    def __len__(self):
        return len(self.nodes)


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Reverse sweep over the tape, accumulating gradients of ``loss``.

    Gradients land on every touched tensor's ``.grad``.  Returns gradients
    aligned with ``params``; parameters never seen by the tape get zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if tape._consumed:
        raise RuntimeError("backward: tape already replayed; record a fresh forward pass")
    tape._consumed = True

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        out_grad = node.out.grad
        if out_grad is None:
            continue
        input_grads = node.backward_fn(out_grad)
        for tensor, g in zip(node.inputs, input_grads):
            if g is None:
                continue
            if tensor.grad is None:
                tensor.grad = g
            else:
                tensor.grad = tensor.grad + g
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def _emit(tape: Optional[Tape], out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, dtype=None)
    return _emit(tape, out, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, dtype=None)
    return _emit(tape, out, (a, b), lambda g: (g * b.data, g * a.data))


def affine(x: Tensor, scale: float, shift: float, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise ``scale * x + shift`` with python-scalar coefficients."""
    out = Tensor(x.data * x.data.dtype.type(scale) + x.data.dtype.type(shift), dtype=None)
    return _emit(tape, out, (x,), lambda g: (g * x.data.dtype.type(scale),))


def mul_const(x: Tensor, c: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise product with a constant array (no gradient into ``c``)."""
    if x.data.shape != c.shape:
        raise ValueError(f"mul_const: shape mismatch {x.data.shape} vs {c.shape}")
    out = Tensor(x.data * c, dtype=None)
    return _emit(tape, out, (x,), lambda g: (g * c,))


def bias_add(x: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Adds a per-feature bias: (N,F)+(F,) or (N,C,H,W)+(C,)."""
    if x.data.ndim == 2 and b.data.shape == (x.data.shape[1],):
        out = Tensor(x.data + b.data, dtype=None)
        return _emit(tape, out, (x, b), lambda g: (g, g.sum(axis=0)))
    if x.data.ndim == 4 and b.data.shape == (x.data.shape[1],):
        out = Tensor(x.data + b.data[None, :, None, None], dtype=None)
        return _emit(tape, out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))
    raise ValueError(f"bias_add: shape mismatch {x.data.shape} vs {b.data.shape}")


def matmul(x: Tensor, w: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"matmul: shape mismatch {x.data.shape} vs {w.data.shape}")
    out = Tensor(x.data @ w.data, dtype=None)

    def bw(g):
        return g @ w.data.T, x.data.T @ g

    return _emit(tape, out, (x, w), bw)


# ---------------------------------------------------------------------------
# activations and clipping


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), dtype=None)
    return _emit(tape, out, (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, dtype=None)
    return _emit(tape, out, (x,), lambda g: (g * (1.0 - y * y),))


def clip(x: Tensor, lo: float, hi: float, tape: Optional[Tape] = None) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was in range."""
    out = Tensor(np.clip(x.data, lo, hi), dtype=None)
    mask = (x.data >= lo) & (x.data <= hi)
    return _emit(tape, out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(x.data.reshape(shape), dtype=None)
    return _emit(tape, out, (x,), lambda g: (g.reshape(x.data.shape),))


def flatten(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    return reshape(x, (x.data.shape[0], -1), tape)


# ---------------------------------------------------------------------------
# convolution and pooling


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Hp, Wp) -> (N, C, Ho, Wo, kh, kw) view, no copy
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0,
           tape: Optional[Tape] = None) -> Tensor:
    """2-D convolution, NCHW input with (F, C, kh, kw) filters.

    Output spatial size follows floor((H + 2*pad - k) / stride) + 1.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv2d: shape mismatch {x.data.shape} vs {w.data.shape}")
    n, c, h, wd = x.data.shape
    f, _, kh, kw = w.data.shape
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ValueError(f"conv2d: kernel {w.data.shape} larger than padded input {x.data.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _conv_windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    # (N,C,Ho,Wo,kh,kw) x (F,C,kh,kw) -> (N,Ho,Wo,F)
    out_nhwf = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out = Tensor(np.ascontiguousarray(out_nhwf.transpose(0, 3, 1, 2)), dtype=None)

    def bw(g):
        g_nhwf = g.transpose(0, 2, 3, 1)
        dw = np.tensordot(g_nhwf, win, axes=([0, 1, 2], [0, 2, 3]))  # (F,C,kh,kw)
        dcols = np.tensordot(g_nhwf, w.data, axes=([3], [0]))        # (N,Ho,Wo,C,kh,kw)
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                dxp[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += \
                    dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw

    return _emit(tape, out, (x, w), bw)


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None,
              tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d: expected NCHW input, got shape {x.data.shape}")
    stride = stride or kernel
    win = _conv_windows(x.data, kernel, kernel, stride)
    n, c, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], dtype=None)

    def bw(g):
        dx = np.zeros_like(x.data)
        onehot = np.zeros_like(flat)
        np.put_along_axis(onehot, arg[..., None], 1.0, axis=-1)
        contrib = onehot.reshape(n, c, ho, wo, kernel, kernel) * g[..., None, None]
        for u in range(kernel):
            for v in range(kernel):
                dx[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += contrib[..., u, v]
        return (dx,)

    return _emit(tape, out, (x,), bw)


def avgpool2d(x: Tensor, kernel: int, stride: Optional[int] = None,
              tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"avgpool2d: expected NCHW input, got shape {x.data.shape}")
    stride = stride or kernel
    win = _conv_windows(x.data, kernel, kernel, stride)
    ho, wo = win.shape[2], win.shape[3]
    out = Tensor(win.mean(axis=(4, 5)), dtype=None)
    inv = 1.0 / (kernel * kernel)

    def bw(g):
        dx = np.zeros_like(x.data)
        gi = g * x.data.dtype.type(inv)
        for u in range(kernel):
            for v in range(kernel):
                dx[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += gi
        return (dx,)

    return _emit(tape, out, (x,), bw)


def global_avgpool(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean over the spatial axes: (N,C,H,W) -> (N,C,1,1)."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avgpool: expected NCHW input, got shape {x.data.shape}")
    h, w = x.data.shape[2], x.data.shape[3]
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True), dtype=None)
    inv = 1.0 / (h * w)

    def bw(g):
        return (np.broadcast_to(g * x.data.dtype.type(inv), x.data.shape).copy(),)

    return _emit(tape, out, (x,), bw)


# ---------------------------------------------------------------------------
# reductions and classification losses


def sum_all(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = Tensor(x.data.sum(dtype=np.float64).astype(x.data.dtype), dtype=None)
    return _emit(tape, out, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"softmax: expected (N, classes) logits, got shape {x.data.shape}")
    y = _softmax(x.data)
    out = Tensor(y, dtype=None)

    def bw(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _emit(tape, out, (x,), bw)


def log_softmax(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"log_softmax: expected (N, classes) logits, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse, dtype=None)

    def bw(g):
        p = np.exp(out.data)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit(tape, out, (x,), bw)


def cross_entropy(logits: Tensor, labels: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax logits."""
    if logits.data.ndim != 2 or len(labels) != logits.data.shape[0]:
        raise ValueError(
            f"cross_entropy: shape mismatch logits {logits.data.shape} vs labels ({len(labels)},)")
    n = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    nll = -logp[np.arange(n), labels]
    loss = Tensor(nll.mean(dtype=np.float64).astype(logits.data.dtype), dtype=None)
    if not np.isfinite(loss.data):
        raise FloatingPointError("cross_entropy: non-finite loss")

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _emit(tape, loss, (logits,), bw)


def straight_through(x: Tensor, quantized_forward, pass_mask: Optional[np.ndarray] = None,
                     tape: Optional[Tape] = None) -> Tensor:
    """Forward takes the quantized values; backward is identity on ``x``.

    ``pass_mask`` zeroes the gradient where the pre-quantization input was
    clipped out of the quantizer's range.
    """
    q = quantized_forward.data if isinstance(quantized_forward, Tensor) else np.asarray(quantized_forward)
    if q.shape != x.data.shape:
        raise ValueError(f"straight_through: shape mismatch {x.data.shape} vs {q.shape}")
    out = Tensor(q.astype(x.data.dtype, copy=False), dtype=None)
    if pass_mask is None:
        return _emit(tape, out, (x,), lambda g: (g,))
    mask = pass_mask.astype(x.data.dtype)
    return _emit(tape, out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# SGD with momentum


@dataclass
class SgdConfig:
    """Plain SGD with classical momentum: v <- m*v - lr*g; p <- p + v."""

    learning_rate: float
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"SgdConfig: learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"SgdConfig: momentum must be in [0, 1), got {self.momentum}")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], cfg: SgdConfig,
             velocity: Optional[list[np.ndarray]] = None):
    """One in-place update; returns (params, velocity) for chaining."""
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    if len(params) != len(grads) or len(params) != len(velocity):
        raise ValueError("sgd_step: params, grads and velocity must be aligned")
    lr = np.float64(cfg.learning_rate)
    mom = np.float64(cfg.momentum)
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.data.shape:
            raise ValueError(f"sgd_step: shape mismatch param {p.data.shape} vs grad {g.shape}")
        v *= p.data.dtype.type(mom)
        v -= p.data.dtype.type(lr) * g
        p.data += v
    return params, velocity
