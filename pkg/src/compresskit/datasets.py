"""Datasets: procedurally drawn glyph classes and IDX file loading.

The synthetic set draws one glyph family per class (rectangle, disk,
cross, stripes, ...) with per-sample position/scale/intensity jitter and
optional additive Gaussian noise, normalized to [0, 1].  Splits are a
deterministic 0.7/0.15/0.15 shuffle of the generated order.  The IDX
reader accepts the standard big-endian image/label container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SplitData:
    name: str
    params: dict
    num_classes: int
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train_x.shape[1:])

    @property
    def chance_accuracy(self) -> float:
        return 100.0 / self.num_classes


# ---------------------------------------------------------------------------
# glyph drawing


def _grid(size: int):
    return np.meshgrid(np.arange(size), np.arange(size), indexing="ij")


def _draw_rectangle(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.35, 0.65, 2) * size
    hy, hx = rng.uniform(0.18, 0.32, 2) * size
    return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)


def _draw_disk(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.38, 0.62, 2) * size
    r = rng.uniform(0.22, 0.34) * size
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2


def _draw_cross(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.4, 0.6, 2) * size
    t = rng.uniform(0.06, 0.11) * size + 0.5
    arm = rng.uniform(0.3, 0.45) * size
    v = (np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= arm)
    h = (np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= arm)
    return v | h


def _draw_hstripes(size, rng):
    yy, _ = _grid(size)
    period = max(3, int(round(size / rng.uniform(3.0, 4.5))))
    phase = rng.integers(0, period)
    return ((yy + phase) % period) < period / 2


def _draw_vstripes(size, rng):
    _, xx = _grid(size)
    period = max(3, int(round(size / rng.uniform(3.0, 4.5))))
    phase = rng.integers(0, period)
    return ((xx + phase) % period) < period / 2


def _draw_ring(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.42, 0.58, 2) * size
    r = rng.uniform(0.26, 0.36) * size
    w = rng.uniform(0.08, 0.14) * size + 0.5
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= (r + w / 2) ** 2) & (d2 >= (r - w / 2) ** 2)


def _draw_frame(size, rng):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(0.42, 0.58, 2) * size
    hy, hx = rng.uniform(0.26, 0.36, 2) * size
    t = rng.uniform(0.08, 0.14) * size + 0.5
    outer = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    inner = (np.abs(yy - cy) <= hy - t) & (np.abs(xx - cx) <= hx - t)
    return outer & ~inner


def _draw_diag_cross(size, rng):
    yy, xx = _grid(size)
    t = rng.uniform(0.07, 0.12) * size + 0.5
    off = rng.uniform(-0.08, 0.08) * size
    d1 = np.abs((yy - xx) + off) <= t
    d2 = np.abs((yy + xx - size + 1) + off) <= t
    return d1 | d2


def _draw_checker(size, rng):
    yy, xx = _grid(size)
    cell = max(2, int(round(size / rng.uniform(3.5, 5.0))))
    py, px = rng.integers(0, cell, 2)
    return ((((yy + py) // cell) + ((xx + px) // cell)) % 2) == 0


def _draw_half(size, rng):
    yy, xx = _grid(size)
    off = rng.uniform(-0.15, 0.15) * size
    if rng.random() < 0.5:
        return (yy - xx) > off
    return (yy + xx - size + 1) > off


GLYPHS = [_draw_rectangle, _draw_disk, _draw_cross, _draw_hstripes, _draw_vstripes,
          _draw_ring, _draw_frame, _draw_diag_cross, _draw_checker, _draw_half]


def _render(cls: int, size: int, sigma: float, rng) -> np.ndarray:
    mask = GLYPHS[cls](size, rng)
    bg = rng.uniform(0.0, 0.12)
    fg = rng.uniform(0.72, 1.0)
    img = np.where(mask, fg, bg).astype(np.float32)
    if sigma > 0:
        img = img + rng.normal(0.0, sigma, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _split(x: np.ndarray, y: np.ndarray, rng) -> tuple:
    n = len(x)
    order = rng.permutation(n)
    n_train = int(0.7 * n)
    n_val = int(0.15 * n)
    tr, va, te = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    return x[tr], y[tr], x[va], y[va], x[te], y[te]


def synthetic_shapes(classes: int = 4, image_size: int = 16, samples: int = 4000,
                     noise_sigma: float = 0.1, seed: int = 0) -> SplitData:
    """Balanced glyph classification set with deterministic splits."""
    if not 2 <= classes <= 10:
        raise ValueError(f"synthetic_shapes: classes must be in [2, 10], got {classes}")
    if not 8 <= image_size <= 32:
        raise ValueError(f"synthetic_shapes: image_size must be in [8, 32], got {image_size}")
    if samples < classes:
        raise ValueError(f"synthetic_shapes: need at least {classes} samples")
    rng = np.random.default_rng(seed)
    xs = np.empty((samples, 1, image_size, image_size), dtype=np.float32)
    ys = np.empty(samples, dtype=np.int64)
    for i in range(samples):
        c = i % classes
        xs[i, 0] = _render(c, image_size, noise_sigma, rng)
        ys[i] = c
    parts = _split(xs, ys, rng)
    return SplitData("synthetic_shapes",
                     {"classes": classes, "image_size": image_size, "samples": samples,
                      "noise_sigma": noise_sigma, "seed": seed},
                     classes, *parts)


# ---------------------------------------------------------------------------
# IDX container


_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"),
               0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}


def read_idx(path) -> np.ndarray:
    """Parses one IDX file (big-endian magic, dims header, raw payload)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: malformed IDX header: file ends at byte {len(raw)}, "
                         f"need 4 magic bytes")
    if raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: malformed IDX header at byte 0: magic must start "
                         f"with two zero bytes, got {raw[0]:#04x} {raw[1]:#04x}")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ValueError(f"{path}: malformed IDX header at byte 2: unknown dtype "
                         f"code {code:#04x}")
    if ndim == 0:
        raise ValueError(f"{path}: malformed IDX header at byte 3: zero dimensions")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ValueError(f"{path}: malformed IDX header: file ends at byte {len(raw)}, "
                         f"need {header_end} bytes for {ndim} dimension sizes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = np.dtype(_IDX_DTYPES[code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise ValueError(f"{path}: payload mismatch at byte {header_end}: expected "
                         f"{expected} bytes for shape {dims}, got {len(raw) - header_end}")
    arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=header_end)
    return arr.reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    """Writes an array in IDX layout (u8 payloads only; test/demo helper)."""
    codes = {np.dtype(np.uint8): 0x08}
    if arr.dtype not in codes:
        raise ValueError(f"write_idx: unsupported dtype {arr.dtype}")
    header = struct.pack(f">BBBB{arr.ndim}I", 0, 0, codes[arr.dtype], arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def idx_files(images, labels, seed: int = 0) -> SplitData:
    """Builds splits from an IDX image tensor and its label vector."""
    imgs = read_idx(images)
    labs = read_idx(labels)
    if imgs.ndim == 3:
        imgs = imgs[:, None, :, :]
    if imgs.ndim != 4:
        raise ValueError(f"{images}: expected a 3-D or 4-D image tensor, got shape {imgs.shape}")
    if labs.ndim != 1 or len(labs) != len(imgs):
        raise ValueError(f"{labels}: label shape {labs.shape} does not match "
                         f"{len(imgs)} images")
    x = imgs.astype(np.float32)
    if imgs.dtype == np.uint8:
        x /= 255.0
    y = labs.astype(np.int64)
    num_classes = int(y.max()) + 1
    rng = np.random.default_rng(seed)
    parts = _split(x, y, rng)
    return SplitData("idx_files", {"images": str(images), "labels": str(labels),
                                   "seed": seed}, num_classes, *parts)


def generate_dataset(name: str, params: dict, seed: int = 0) -> SplitData:
    """Dataset factory: ``synthetic_shapes`` or ``idx_files``."""
    if name == "synthetic_shapes":
        return synthetic_shapes(seed=seed, **params)
    if name == "idx_files":
        return idx_files(seed=seed, **params)
    raise ValueError(f"unknown dataset {name!r}; expected 'synthetic_shapes' or 'idx_files'")
