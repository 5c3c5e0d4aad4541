"""Uniform fixed-point quantizers and their straight-through training ops.

The scalar quantizer maps [0, 1] onto a (2^k - 1)-step grid.  Weight
quantization squashes weights through tanh onto [0, 1], quantizes, and
rescales to [-1, 1]; 1-bit weights collapse to sign(w) * mean(|w|).
Activation quantization clips to [0, 1] first.  Grid arithmetic runs in
float64 so that quantized values are exact grid points for every k up
to 32.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import Tape, Tensor, affine, clip, straight_through, tanh


def _check_bits(k: int) -> None:
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 32:
        raise ValueError(f"bit width must be an integer in [1, 32], got {k!r}")


def quantize_k(x, k: int):
    """Round onto the k-bit grid in [0, 1]: round(x*(2^k-1))/(2^k-1).

    Inputs are clipped to [0, 1] first; ties round half away from zero.
    Returns a scalar for scalar input, else a float64 array.
    """
    _check_bits(k)
    arr = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    levels = float(2 ** k - 1)
    q = np.floor(arr * levels + 0.5) / levels
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return float(q)
    return q


def is_on_grid(values, k: int, tol: float = 2e-7) -> bool:
    """True when every value sits on the k-bit grid within ``tol``."""
    _check_bits(k)
    arr = np.asarray(values, dtype=np.float64)
    levels = float(2 ** k - 1)
    steps = arr * levels
    return bool(np.all(np.abs(steps - np.round(steps)) <= tol * max(levels, 1.0)))


def fake_quant_weights(w: Tensor, bits: int, tape: Optional[Tape] = None,
                       surrogate: bool = False) -> Tensor:
    """Simulated weight quantization for the forward pass.

    bits == 32 is an exact identity.  bits == 1 uses sign(w) * mean(|w|).
    Otherwise: tanh-normalize to [0, 1], quantize, rescale to [-1, 1].
    The normalization scale is treated as a constant for the step; the
    quantizer itself is bridged with a straight-through gradient.

    With ``surrogate`` the rounding step is dropped but the rest of the
    transform kept, yielding the smooth function whose gradient the
    straight-through estimator propagates (used by the gradient oracle).
    """
    _check_bits(bits)
    if bits == 32:
        return w
    if bits == 1:
        if surrogate:
            return w
        scale = float(np.mean(np.abs(w.data)))
        q = np.where(w.data >= 0, scale, -scale)
        return straight_through(w, q, tape=tape)
    t = tanh(w, tape)
    s = float(np.max(np.abs(t.data)))
    if s == 0.0:
        s = 1.0
    u = affine(t, 0.5 / s, 0.5, tape)
    if not surrogate:
        u = straight_through(u, quantize_k(u.data, bits), tape=tape)
    return affine(u, 2.0, -1.0, tape)


def fake_quant_acts(x: Tensor, bits: int, tape: Optional[Tape] = None,
                    surrogate: bool = False) -> Tensor:
    """Simulated activation quantization: clip to [0, 1], then quantize.

    The straight-through gradient is zeroed where the input was clipped
    out of range.  bits == 32 is an exact identity.  ``surrogate`` keeps
    the clip but drops the rounding (see ``fake_quant_weights``).
    """
    _check_bits(bits)
    if bits == 32:
        return x
    if surrogate:
        return clip(x, 0.0, 1.0, tape)
    mask = (x.data >= 0.0) & (x.data <= 1.0)
    return straight_through(x, quantize_k(x.data, bits), pass_mask=mask, tape=tape)
