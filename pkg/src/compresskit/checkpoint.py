"""Model checkpoints: inspectable text header plus raw float32 payload.

Layout: the magic line ``OCMPv1``, a JSON header block describing the
architecture, bit widths, seed and parameter shapes, a payload marker
line, then every parameter as little-endian float32 in declaration
order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .models import ExitHead, Layer, LayerSpec, ModelGraph, validate_model

MAGIC = b"OCMPv1\n"
PAYLOAD_MARKER = b"\n---PAYLOAD---\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _spec_to_json(spec: LayerSpec) -> dict:
    return {"kind": spec.kind, "dims": spec.dims,
            "weight_bits": spec.weight_bits, "act_bits": spec.act_bits}


def _spec_from_json(d: dict) -> LayerSpec:
    return LayerSpec(d["kind"], dict(d["dims"]), d["weight_bits"], d["act_bits"])


def _iter_params(m: ModelGraph):
    """(name, tensor) pairs in declaration order: body first, then heads."""
    for i, layer in enumerate(m.layers):
        if layer.weight is not None:
            yield f"layers.{i}.weight", layer.weight
        if layer.bias is not None:
            yield f"layers.{i}.bias", layer.bias
    for k, head in enumerate(m.exit_heads):
        for j, layer in enumerate(head.layers):
            if layer.weight is not None:
                yield f"heads.{k}.{j}.weight", layer.weight
            if layer.bias is not None:
                yield f"heads.{k}.{j}.bias", layer.bias


def save_checkpoint(m: ModelGraph, path) -> None:
    params = list(_iter_params(m))
    for name, t in params:
        if not np.all(np.isfinite(t.data)):
            raise CheckpointError(f"refusing to save non-finite parameter {name}")
    header = {
        "format_version": FORMAT_VERSION,
        "arch": {
            "name": m.arch,
            "width_multiplier": m.width_multiplier,
            "input_shape": list(m.input_shape),
            "num_classes": m.num_classes,
            "layers": [_spec_to_json(l.spec) for l in m.layers],
            "residual_groups": [list(g) for g in m.residual_groups],
            "exit_heads": [{"attach_index": h.attach_index,
                            "layers": [_spec_to_json(l.spec) for l in h.layers]}
                           for h in m.exit_heads],
        },
        "seed": m.seed,
        "meta": m.meta,
        "params": [{"name": name, "shape": list(t.data.shape)} for name, t in params],
    }
    blob = MAGIC + json.dumps(header, indent=2, sort_keys=True).encode() + PAYLOAD_MARKER
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f4").tobytes()
                       for _, t in params)
    Path(path).write_bytes(blob + payload)


def load_checkpoint(path) -> ModelGraph:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    sep = raw.find(PAYLOAD_MARKER)
    if sep < 0:
        raise CheckpointError(f"{path}: payload marker missing")
    try:
        header = json.loads(raw[len(MAGIC):sep].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}")

    payload = raw[sep + len(PAYLOAD_MARKER):]
    declared = header["params"]
    total = sum(int(np.prod(p["shape"])) for p in declared)
    if len(payload) != total * 4:
        raise CheckpointError(
            f"{path}: truncated payload: header declares {total} floats "
            f"({total * 4} bytes), payload has {len(payload)} bytes")

    arrays = {}
    offset = 0
    for p in declared:
        count = int(np.prod(p["shape"]))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[p["name"]] = arr.reshape(p["shape"]).astype(np.float32)
        offset += count * 4

    arch = header["arch"]
    layers = [Layer(_spec_from_json(d)) for d in arch["layers"]]
    heads = [ExitHead(h["attach_index"], [Layer(_spec_from_json(d)) for d in h["layers"]])
             for h in arch["exit_heads"]]
    m = ModelGraph(
        arch=arch["name"],
        width_multiplier=arch["width_multiplier"],
        input_shape=tuple(arch["input_shape"]),
        num_classes=arch["num_classes"],
        layers=layers,
        residual_groups=[tuple(g) for g in arch["residual_groups"]],
        exit_heads=heads,
        seed=header["seed"],
        meta=header.get("meta", {}),
    )
    _assign_params(m, arrays, path)
    validate_model(m)
    return m


def _expected_shape(spec: LayerSpec, which: str) -> tuple:
    if spec.kind == "conv2d":
        d = spec.dims
        if which == "weight":
            return (d["out_channels"], d["in_channels"], d["kernel"], d["kernel"])
        return (d["out_channels"],)
    if spec.kind == "dense":
        d = spec.dims
        if which == "weight":
            return (d["in_features"], d["out_features"])
        return (d["out_features"],)
    raise CheckpointError(f"layer kind {spec.kind!r} carries no parameters")


def _assign_params(m: ModelGraph, arrays: dict, path) -> None:
    def assign(layer: Layer, prefix: str):
        if layer.spec.kind not in ("conv2d", "dense"):
            return
        for which in ("weight", "bias"):
            name = f"{prefix}.{which}"
            if name not in arrays:
                raise CheckpointError(f"{path}: header/payload mismatch: missing {name}")
            arr = arrays.pop(name)
            want = _expected_shape(layer.spec, which)
            if tuple(arr.shape) != want:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: payload {tuple(arr.shape)}, "
                    f"architecture expects {want}")
            setattr(layer, which, Tensor(arr, dtype=None))

    for i, layer in enumerate(m.layers):
        assign(layer, f"layers.{i}")
    for k, head in enumerate(m.exit_heads):
        for j, layer in enumerate(head.layers):
            assign(layer, f"heads.{k}.{j}")
    if arrays:
        raise CheckpointError(
            f"{path}: header/payload mismatch: unexpected params {sorted(arrays)}")
