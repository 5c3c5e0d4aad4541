"""Toy classifier architectures and the layer-graph they share.

A :class:`ModelGraph` is an ordered list of layers (conv/dense plus
elementwise glue), optional residual groups tying the output channels of
skip-connected convolutions together, and optional early-exit heads.
Models are plain data; the forward pass is a function so the same graph
can run with or without a gradient tape, and with per-layer fake
quantization driven by the layer bit widths.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .quantizers import fake_quant_acts, fake_quant_weights

LAYER_KINDS = ("conv2d", "dense", "relu", "tanh", "avgpool", "maxpool", "flatten", "residual_add")
MAC_KINDS = ("conv2d", "dense")


@dataclass
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)
    weight_bits: int = 32
    act_bits: int = 32

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        for name, b in (("weight_bits", self.weight_bits), ("act_bits", self.act_bits)):
            if not 1 <= b <= 32:
                raise ValueError(f"LayerSpec: {name} must be in [1, 32], got {b}")


@dataclass
class Layer:
    spec: LayerSpec
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None


@dataclass
class ExitHead:
    """Small classifier branching off the body at ``attach_index``."""

    attach_index: int
    layers: list

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            if layer.weight is not None:
                out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out


@dataclass
class ModelGraph:
    arch: str
    width_multiplier: float
    input_shape: tuple
    num_classes: int
    layers: list
    residual_groups: list = field(default_factory=list)
    exit_heads: list = field(default_factory=list)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def body_parameters(self) -> list:
        out = []
        for layer in self.layers:
            if layer.weight is not None:
                out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def head_parameters(self) -> list:
        out = []
        for head in self.exit_heads:
            out.extend(head.parameters())
        return out

    def parameters(self) -> list:
        return self.body_parameters() + self.head_parameters()

    @property
    def final_classifier_index(self) -> int:
        for i in range(len(self.layers) - 1, -1, -1):
            if self.layers[i].spec.kind in MAC_KINDS:
                return i
        raise ValueError("model has no classifier layer")


def clone_model(m: ModelGraph) -> ModelGraph:
    """Deep copy with fresh parameter tensors (gradients not carried over)."""
    def copy_layer(layer: Layer) -> Layer:
        return Layer(
            spec=LayerSpec(layer.spec.kind, copy.deepcopy(layer.spec.dims),
                           layer.spec.weight_bits, layer.spec.act_bits),
            weight=None if layer.weight is None else Tensor(layer.weight.data.copy(), dtype=None),
            bias=None if layer.bias is None else Tensor(layer.bias.data.copy(), dtype=None),
        )

    return ModelGraph(
        arch=m.arch,
        width_multiplier=m.width_multiplier,
        input_shape=tuple(m.input_shape),
        num_classes=m.num_classes,
        layers=[copy_layer(l) for l in m.layers],
        residual_groups=[tuple(g) for g in m.residual_groups],
        exit_heads=[ExitHead(h.attach_index, [copy_layer(l) for l in h.layers])
                    for h in m.exit_heads],
        seed=m.seed,
        meta=copy.deepcopy(m.meta),
    )


# ---------------------------------------------------------------------------
# shape inference


def _layer_out_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    kind, dims = spec.kind, spec.dims
    if kind == "conv2d":
        c, h, w = in_shape
        if c != dims["in_channels"]:
            raise ValueError(f"conv2d: input has {c} channels, spec expects {dims['in_channels']}")
        k, s, p = dims["kernel"], dims["stride"], dims["pad"]
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv2d: kernel {k} does not fit input {in_shape}")
        return (dims["out_channels"], ho, wo)
    if kind == "dense":
        if len(in_shape) != 1 or in_shape[0] != dims["in_features"]:
            raise ValueError(f"dense: input shape {in_shape}, spec expects ({dims['in_features']},)")
        return (dims["out_features"],)
    if kind in ("relu", "tanh", "residual_add"):
        return in_shape
    if kind in ("avgpool", "maxpool"):
        c, h, w = in_shape
        if dims.get("global"):
            return (c, 1, 1)
        k = dims["kernel"]
        s = dims.get("stride", k)
        return (c, (h - k) // s + 1, (w - k) // s + 1)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    raise ValueError(f"unknown layer kind {kind!r}")


def output_shapes(m: ModelGraph) -> list:
    """Per-layer output shapes (channel-first, batch dim omitted)."""
    shapes = []
    cur = tuple(m.input_shape)
    for i, layer in enumerate(m.layers):
        if layer.spec.kind == "residual_add":
            src = layer.spec.dims["source"]
            if not 0 <= src < i:
                raise ValueError(f"residual_add at layer {i}: bad source {src}")
            if shapes[src] != cur:
                raise ValueError(
                    f"residual_add at layer {i}: shape {cur} vs source shape {shapes[src]}")
        cur = _layer_out_shape(layer.spec, cur)
        shapes.append(cur)
    return shapes


def head_input_shape(m: ModelGraph, attach_index: int) -> tuple:
    return output_shapes(m)[attach_index]


def validate_model(m: ModelGraph) -> None:
    """Checks layer conformance, residual groups, and exit-head attachment."""
    shapes = output_shapes(m)
    for group in m.residual_groups:
        chans = {m.layers[i].spec.dims["out_channels"] for i in group}
        if len(chans) > 1:
            raise ValueError(f"residual group {tuple(group)} has unequal channel counts {chans}")
    final = m.final_classifier_index
    prev = -1
    for head in m.exit_heads:
        if not 0 <= head.attach_index < final:
            raise ValueError(
                f"exit head attach index {head.attach_index} must lie before the final "
                f"classifier (layer {final})")
        if head.attach_index <= prev:
            raise ValueError("exit head attach indices must be strictly increasing")
        prev = head.attach_index
        _check_head_shape(head, shapes[head.attach_index], m.num_classes)


def _check_head_shape(head: ExitHead, in_shape: tuple, num_classes: int) -> None:
    cur = in_shape
    for layer in head.layers:
        cur = _layer_out_shape(layer.spec, cur)
    if cur != (num_classes,):
        raise ValueError(f"exit head at {head.attach_index}: output shape {cur}, "
                         f"expected ({num_classes},)")


# ---------------------------------------------------------------------------
# initialization and registry


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _conv(rng, c_in: int, c_out: int, k: int = 3, stride: int = 1, pad: int = 1) -> Layer:
    spec = LayerSpec("conv2d", {"in_channels": c_in, "out_channels": c_out,
                                "kernel": k, "stride": stride, "pad": pad})
    w = _kaiming_uniform(rng, (c_out, c_in, k, k), fan_in=c_in * k * k)
    b = np.zeros(c_out, dtype=np.float32)
    return Layer(spec, Tensor(w, dtype=None), Tensor(b, dtype=None))


def _dense(rng, n_in: int, n_out: int) -> Layer:
    spec = LayerSpec("dense", {"in_features": n_in, "out_features": n_out})
    w = _kaiming_uniform(rng, (n_in, n_out), fan_in=n_in)
    b = np.zeros(n_out, dtype=np.float32)
    return Layer(spec, Tensor(w, dtype=None), Tensor(b, dtype=None))


def _plain(kind: str, **dims) -> Layer:
    return Layer(LayerSpec(kind, dims))


def scaled_width(base: int, multiplier: float) -> int:
    """round(base * multiplier) with a floor of one channel."""
    return max(1, int(math.floor(base * multiplier + 0.5)))


def _build_toy_mlp(rng, in_shape, num_classes, mult):
    n_in = int(np.prod(in_shape))
    h1, h2 = scaled_width(64, mult), scaled_width(32, mult)
    layers = [
        _plain("flatten"),
        _dense(rng, n_in, h1),
        _plain("relu"),
        _dense(rng, h1, h2),
        _plain("relu"),
        _dense(rng, h2, num_classes),
    ]
    return layers, []


def _build_toy_cnn(rng, in_shape, num_classes, mult):
    c_in = in_shape[0]
    c1, c2, c3 = (scaled_width(b, mult) for b in (16, 32, 64))
    layers = [
        _conv(rng, c_in, c1),
        _plain("relu"),
        _plain("maxpool", kernel=2, stride=2),
        _conv(rng, c1, c2),
        _plain("relu"),
        _plain("maxpool", kernel=2, stride=2),
        _conv(rng, c2, c3),
        _plain("relu"),
        _plain("avgpool", **{"global": True}),
        _plain("flatten"),
        _dense(rng, c3, num_classes),
    ]
    return layers, []


def _build_toy_resnet(rng, in_shape, num_classes, mult):
    c_in = in_shape[0]
    c = scaled_width(16, mult)
    layers = [
        _conv(rng, c_in, c),                       # 0   stem
        _plain("relu"),                            # 1
        _conv(rng, c, c),                          # 2   block 1
        _plain("relu"),                            # 3
        _conv(rng, c, c),                          # 4
        _plain("residual_add", source=1),          # 5
        _plain("relu"),                            # 6
        _plain("maxpool", kernel=2, stride=2),     # 7
        _conv(rng, c, c),                          # 8   block 2
        _plain("relu"),                            # 9
        _conv(rng, c, c),                          # 10
        _plain("residual_add", source=7),          # 11
        _plain("relu"),                            # 12
        _plain("avgpool", **{"global": True}),     # 13
        _plain("flatten"),                         # 14
        _dense(rng, c, num_classes),               # 15
    ]
    # outputs of these convs meet at the residual adds: prune identically
    return layers, [(0, 4, 10)]


ARCH_REGISTRY = {
    "toy_mlp": _build_toy_mlp,
    "toy_cnn": _build_toy_cnn,
    "toy_resnet": _build_toy_resnet,
}


def build_model(arch_name: str, width_multiplier: float = 1.0, num_classes: int = 4,
                seed: int = 0, input_shape: tuple = (1, 16, 16)) -> ModelGraph:
    """Builds a registry architecture with seeded Kaiming-uniform weights.

    Channel counts scale as round(base * width_multiplier), clamped to at
    least one channel per layer.
    """
    if arch_name not in ARCH_REGISTRY:
        raise ValueError(
            f"unknown architecture {arch_name!r}; registry: {sorted(ARCH_REGISTRY)}")
    if width_multiplier <= 0:
        raise ValueError(f"width_multiplier must be positive, got {width_multiplier}")
    rng = np.random.default_rng(seed)
    layers, groups = ARCH_REGISTRY[arch_name](rng, tuple(input_shape), num_classes,
                                              width_multiplier)
    m = ModelGraph(
        arch=arch_name,
        width_multiplier=width_multiplier,
        input_shape=tuple(input_shape),
        num_classes=num_classes,
        layers=layers,
        residual_groups=groups,
        seed=seed,
    )
    validate_model(m)
    return m


def scale_model_arch(m: ModelGraph, multiplier: float, seed: int) -> ModelGraph:
    """Fresh model with the same layer structure but width-scaled channels.

    Used to derive a student from a (possibly pruned or quantized) teacher:
    channel/feature counts scale from the teacher's current values, bit
    widths carry over, exit heads are not copied.
    """
    if multiplier <= 0:
        raise ValueError(f"multiplier must be positive, got {multiplier}")
    rng = np.random.default_rng(seed)
    shapes = output_shapes(m)
    new_layers = []
    chan_map = {}  # old layer index -> new out channels
    for i, layer in enumerate(m.layers):
        spec = layer.spec
        if spec.kind == "conv2d":
            c_in = chan_map.get(_producer_index(m, i), m.input_shape[0])
            c_out = scaled_width(spec.dims["out_channels"], multiplier)
            new = _conv(rng, c_in, c_out, spec.dims["kernel"], spec.dims["stride"],
                        spec.dims["pad"])
            chan_map[i] = c_out
        elif spec.kind == "dense":
            prod = _producer_index(m, i)
            if prod is None:
                n_in = spec.dims["in_features"]  # fed by the raw (flattened) input
            else:
                # features per producer channel survive any flatten in between
                block = spec.dims["in_features"] // shapes[prod][0]
                n_in = chan_map[prod] * block
            if i == m.final_classifier_index:
                n_out = m.num_classes
            else:
                n_out = scaled_width(spec.dims["out_features"], multiplier)
            new = _dense(rng, n_in, n_out)
            chan_map[i] = n_out
        else:
            new = Layer(LayerSpec(spec.kind, copy.deepcopy(spec.dims)))
        new.spec.weight_bits = spec.weight_bits
        new.spec.act_bits = spec.act_bits
        new_layers.append(new)
    student = ModelGraph(
        arch=m.arch,
        width_multiplier=m.width_multiplier * multiplier,
        input_shape=tuple(m.input_shape),
        num_classes=m.num_classes,
        layers=new_layers,
        residual_groups=[tuple(g) for g in m.residual_groups],
        seed=seed,
    )
    validate_model(student)
    return student


def _producer_index(m: ModelGraph, i: int) -> Optional[int]:
    """Index of the conv/dense layer whose output channels feed layer ``i``.

    Walks back over elementwise, pool, flatten, and residual layers, which
    all preserve channel identity.  None means the model input.
    """
    j = i - 1
    while j >= 0:
        if m.layers[j].spec.kind in MAC_KINDS:
            return j
        j -= 1
    return None


# ---------------------------------------------------------------------------
# forward pass


def _run_layer(layer: Layer, x: Tensor, acts: list, tape: Optional[Tape],
               quant_surrogate: bool = False) -> Tensor:
    spec = layer.spec
    kind = spec.kind
    if kind == "conv2d":
        h = fake_quant_acts(x, spec.act_bits, tape, surrogate=quant_surrogate)
        wq = fake_quant_weights(layer.weight, spec.weight_bits, tape, surrogate=quant_surrogate)
        h = ad.conv2d(h, wq, spec.dims["stride"], spec.dims["pad"], tape)
        return ad.bias_add(h, layer.bias, tape)
    if kind == "dense":
        h = fake_quant_acts(x, spec.act_bits, tape, surrogate=quant_surrogate)
        wq = fake_quant_weights(layer.weight, spec.weight_bits, tape, surrogate=quant_surrogate)
        h = ad.matmul(h, wq, tape)
        return ad.bias_add(h, layer.bias, tape)
    if kind == "relu":
        return ad.relu(x, tape)
    if kind == "tanh":
        return ad.tanh(x, tape)
    if kind == "maxpool":
        return ad.maxpool2d(x, spec.dims["kernel"], spec.dims.get("stride"), tape)
    if kind == "avgpool":
        if spec.dims.get("global"):
            return ad.global_avgpool(x, tape)
        return ad.avgpool2d(x, spec.dims["kernel"], spec.dims.get("stride"), tape)
    if kind == "flatten":
        return ad.flatten(x, tape)
    if kind == "residual_add":
        return ad.add(x, acts[spec.dims["source"]], tape)
    raise ValueError(f"unknown layer kind {kind!r}")


def _needed_activations(m: ModelGraph, with_heads: bool) -> set:
    needed = {l.spec.dims["source"] for l in m.layers if l.spec.kind == "residual_add"}
    if with_heads:
        needed.update(h.attach_index for h in m.exit_heads)
    return needed


def head_forward(head: ExitHead, act: Tensor, tape: Optional[Tape] = None,
                 quant_surrogate: bool = False) -> Tensor:
    h = act
    acts: list = []
    for layer in head.layers:
        h = _run_layer(layer, h, acts, tape, quant_surrogate)
    return h


def forward(m: ModelGraph, x, tape: Optional[Tape] = None, with_heads: bool = False,
            collect: Optional[Iterable[int]] = None, quant_surrogate: bool = False):
    """Runs the body (and optionally the exit heads) on a batch.

    ``x`` is an (N, C, H, W) array or Tensor.  Returns the final logits,
    or (logits, [head logits]) when ``with_heads`` is set, or
    (logits, {index: activation}) when ``collect`` indices are given.
    ``quant_surrogate`` replaces the quantizers with their smooth
    straight-through surrogates (gradient-oracle instrumentation).
    """
    h = x if isinstance(x, Tensor) else Tensor(x, dtype=None)
    if h.data.ndim != 4 or tuple(h.data.shape[1:]) != tuple(m.input_shape):
        raise ValueError(
            f"forward: input shape {h.data.shape} does not match model input "
            f"(N, {', '.join(str(d) for d in m.input_shape)})")
    collect_set = set(collect) if collect is not None else set()
    needed = _needed_activations(m, with_heads) | collect_set
    acts: list = [None] * len(m.layers)
    for i, layer in enumerate(m.layers):
        h = _run_layer(layer, h, acts, tape, quant_surrogate)
        if i in needed:
            acts[i] = h
    if collect is not None:
        return h, {i: acts[i] for i in collect_set}
    if with_heads:
        head_logits = [head_forward(head, acts[head.attach_index], tape, quant_surrogate)
                       for head in m.exit_heads]
        return h, head_logits
    return h


# ---------------------------------------------------------------------------
# exit heads


def make_exit_head(m: ModelGraph, attach_index: int, seed: int) -> ExitHead:
    """Pool-plus-classifier head whose bit widths inherit the attach point."""
    shapes = output_shapes(m)
    in_shape = shapes[attach_index]
    prod = None
    for j in range(attach_index, -1, -1):
        if m.layers[j].spec.kind in MAC_KINDS:
            prod = m.layers[j].spec
            break
    w_bits = prod.weight_bits if prod is not None else 32
    a_bits = prod.act_bits if prod is not None else 32
    rng = np.random.default_rng(seed)
    layers = []
    if len(in_shape) == 3:
        layers.append(_plain("avgpool", **{"global": True}))
        layers.append(_plain("flatten"))
        n_in = in_shape[0]
    else:
        n_in = in_shape[0]
    head_dense = _dense(rng, n_in, m.num_classes)
    head_dense.spec.weight_bits = w_bits
    head_dense.spec.act_bits = a_bits
    layers.append(head_dense)
    return ExitHead(attach_index, layers)


def attach_exit_heads(m: ModelGraph, positions: Sequence[int],
                      seed: Optional[int] = None) -> ModelGraph:
    """Returns a copy of ``m`` with freshly initialized heads at ``positions``.

    Body parameters are untouched; head bit widths inherit the body's
    current widths at each attach point.
    """
    if not positions:
        raise ValueError("attach_exit_heads: at least one position required")
    positions = list(positions)
    if positions != sorted(set(positions)):
        raise ValueError(f"attach positions must be strictly increasing, got {positions}")
    final = m.final_classifier_index
    for p in positions:
        if not 0 <= p < final:
            raise ValueError(
                f"attach position {p} out of range: must be in [0, {final}) "
                f"(before the final classifier)")
    base_seed = m.seed if seed is None else seed
    out = clone_model(m)
    out.exit_heads = [make_exit_head(m, p, seed=base_seed + 7919 * (k + 1))
                      for k, p in enumerate(positions)]
    validate_model(out)
    return out


def default_exit_positions(m: ModelGraph, count: int = 1) -> list:
    """Evenly spaced post-activation attach points in the body."""
    candidates = [i for i, layer in enumerate(m.layers)
                  if layer.spec.kind in ("relu", "maxpool")
                  and i < m.final_classifier_index - 1]
    if not candidates:
        raise ValueError("model has no usable exit attach points")
    count = min(count, len(candidates))
    picks = [candidates[int(round((k + 1) * len(candidates) / (count + 1))) - 1]
             for k in range(count)]
    uniq = sorted(set(picks))
    return uniq
