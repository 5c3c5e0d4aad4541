"""Compute and storage accounting in bit-operations.

A multiply-accumulate costs weight_bits * act_bits bit-operations;
unquantized layers count as 32x32.  Elementwise layers (relu, pools,
residual adds, softmax) are free under this convention, which keeps
comparisons internally consistent.  For early-exit models the dynamic
cost is the empirical expectation over an evaluation set, charging every
head evaluated along a sample's path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import ExitHead, LayerSpec, ModelGraph, _layer_out_shape, output_shapes

FULL_BITS = 32


@dataclass
class CostReport:
    macs_per_layer: list
    bitops_static: int
    storage_bits: int
    expected_bitops: float
    bitops_cr: float
    cr: float
    exit_distribution: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "macs_per_layer": [int(v) for v in self.macs_per_layer],
            "bitops_static": int(self.bitops_static),
            "storage_bits": int(self.storage_bits),
            "expected_bitops": float(self.expected_bitops),
            "bitops_cr": float(self.bitops_cr),
            "cr": float(self.cr),
            "exit_distribution": [float(p) for p in self.exit_distribution],
        }


def count_macs(spec: LayerSpec, in_shape: tuple) -> int:
    """Multiply-accumulates of one layer per sample; elementwise layers are 0.

    conv2d: C_out * C_in * k_h * k_w * H_out * W_out;  dense: in * out.
    """
    if spec.kind == "conv2d":
        d = spec.dims
        h_out = (in_shape[1] + 2 * d["pad"] - d["kernel"]) // d["stride"] + 1
        w_out = (in_shape[2] + 2 * d["pad"] - d["kernel"]) // d["stride"] + 1
        return d["out_channels"] * d["in_channels"] * d["kernel"] * d["kernel"] * h_out * w_out
    if spec.kind == "dense":
        return spec.dims["in_features"] * spec.dims["out_features"]
    return 0


def macs_per_layer(m: ModelGraph) -> list:
    shapes = output_shapes(m)
    out = []
    for i, layer in enumerate(m.layers):
        in_shape = tuple(m.input_shape) if i == 0 else shapes[i - 1]
        out.append(count_macs(layer.spec, in_shape))
    return out


def _head_in_shape(m: ModelGraph, head: ExitHead, shapes: list) -> tuple:
    return shapes[head.attach_index]


def head_bitops(m: ModelGraph, head: ExitHead, shapes: Optional[list] = None) -> int:
    """Bit-operations of one exit head evaluation (per sample)."""
    shapes = shapes or output_shapes(m)
    cur = _head_in_shape(m, head, shapes)
    total = 0
    for layer in head.layers:
        total += count_macs(layer.spec, cur) * layer.spec.weight_bits * layer.spec.act_bits
        cur = _layer_out_shape(layer.spec, cur)
    return total


def count_bitops(m: ModelGraph, through_layer: Optional[int] = None,
                 include_heads: bool = False) -> int:
    """Static bit-operations of a full (or prefix) forward pass per sample.

    ``through_layer`` truncates after that body layer index (inclusive).
    Exit-head compute is excluded unless ``include_heads`` is set, which
    adds every head attached at or before the cut.
    """
    shapes = output_shapes(m)
    if through_layer is None:
        through_layer = len(m.layers) - 1
    if not 0 <= through_layer < len(m.layers):
        raise ValueError(f"count_bitops: layer index {through_layer} out of range "
                         f"[0, {len(m.layers)})")
    total = 0
    for i, layer in enumerate(m.layers[:through_layer + 1]):
        in_shape = tuple(m.input_shape) if i == 0 else shapes[i - 1]
        total += count_macs(layer.spec, in_shape) * layer.spec.weight_bits * layer.spec.act_bits
    if include_heads:
        for head in m.exit_heads:
            if head.attach_index <= through_layer:
                total += head_bitops(m, head, shapes)
    return total


def storage_bits(m: ModelGraph, include_heads: bool = True) -> int:
    """Total parameter storage: count * weight_bits of the owning layer."""
    total = 0
    layers = list(m.layers)
    if include_heads:
        for head in m.exit_heads:
            layers.extend(head.layers)
    for layer in layers:
        bits = layer.spec.weight_bits
        for t in (layer.weight, layer.bias):
            if t is not None:
                total += t.data.size * bits
    return total


def expected_bitops(m: ModelGraph, x: np.ndarray, tau: float):
    """Mean per-sample bit-operations under early-exit inference.

    Each sample pays the body cost through its exit layer plus every head
    evaluated up to and including the exit decision.  Returns the
    expectation and the empirical exit distribution (one entry per head
    plus the final classifier).
    """
    if len(x) == 0:
        raise ValueError("expected_bitops: empty dataset")
    from .early_exit import predict_with_exits

    shapes = output_shapes(m)
    n_heads = len(m.exit_heads)
    if n_heads == 0:
        return float(count_bitops(m)), [1.0]

    head_costs = [head_bitops(m, h, shapes) for h in m.exit_heads]
    # cost paid when exiting at head e: body prefix + heads 0..e
    exit_cost = []
    cum_heads = 0
    for e, head in enumerate(m.exit_heads):
        cum_heads += head_costs[e]
        exit_cost.append(count_bitops(m, through_layer=head.attach_index) + cum_heads)
    exit_cost.append(count_bitops(m) + cum_heads)  # ran through: all heads were tried

    _, exit_idx = predict_with_exits(m, x, tau)
    counts = np.bincount(exit_idx, minlength=n_heads + 1)
    dist = counts / len(x)
    expected = float(np.dot(dist, np.asarray(exit_cost, dtype=np.float64)))
    return expected, [float(p) for p in dist]


def original_cost(m: ModelGraph) -> tuple:
    """(bitops, storage) of a model measured headless at full precision."""
    shapes = output_shapes(m)
    bitops = 0
    storage = 0
    for i, layer in enumerate(m.layers):
        in_shape = tuple(m.input_shape) if i == 0 else shapes[i - 1]
        bitops += count_macs(layer.spec, in_shape) * FULL_BITS * FULL_BITS
        for t in (layer.weight, layer.bias):
            if t is not None:
                storage += t.data.size * FULL_BITS
    return bitops, storage


def compression_ratios(original: ModelGraph, compressed: ModelGraph,
                       x: Optional[np.ndarray] = None,
                       tau: Optional[float] = None) -> tuple:
    """(bitops_cr, cr) of ``compressed`` relative to ``original``.

    The original is measured without exit heads at 32w32a.  When the
    compressed model has trained heads, its cost is the early-exit
    expectation over ``x`` at threshold ``tau``; otherwise its static cost.
    """
    orig_bitops, orig_storage = original_cost(original)
    if compressed.exit_heads:
        if x is None or tau is None:
            raise ValueError("compression_ratios: early-exit model needs data and tau")
        comp_bitops, _ = expected_bitops(compressed, x, tau)
    else:
        comp_bitops = float(count_bitops(compressed))
    comp_storage = storage_bits(compressed)
    if comp_bitops <= 0 or comp_storage <= 0:
        raise ValueError("compression_ratios: compressed model has zero cost")
    return orig_bitops / comp_bitops, orig_storage / comp_storage


def cost_report(m: ModelGraph, original: Optional[ModelGraph] = None,
                x: Optional[np.ndarray] = None, tau: Optional[float] = None) -> CostReport:
    """Full accounting of ``m``, with ratios relative to ``original`` (or itself)."""
    base = original if original is not None else m
    static = count_bitops(m)
    if m.exit_heads and x is not None and tau is not None:
        expected, dist = expected_bitops(m, x, tau)
    else:
        expected, dist = float(static), []
    orig_bitops, orig_storage = original_cost(base)
    store = storage_bits(m)
    return CostReport(
        macs_per_layer=macs_per_layer(m),
        bitops_static=static,
        storage_bits=store,
        expected_bitops=expected,
        bitops_cr=orig_bitops / expected,
        cr=orig_storage / store,
        exit_distribution=dist,
    )
