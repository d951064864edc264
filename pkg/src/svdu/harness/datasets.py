"""Synthetic blob datasets and IDX-style file ingestion.

Blobs are the desk-scale stand-in for image data: k Gaussian clusters with
means on a scaled simplex, affinely normalized into [0,1]^d so the pixel
convention matches real datasets. The IDX loader reads the classic
big-endian (magic, dims, u8 payload) layout and scales pixels to [0,1].
"""

from __future__ import annotations

import struct

import numpy as np

from svdu.errors import InputError
from svdu.netcore import LabeledDataset

_IDX_U8 = 0x08


def generate_blobs(d: int, k: int, n: int, separation: float,
                   seed: int = 0) -> LabeledDataset:
    """k balanced Gaussian clusters (unit std) with pairwise mean distance
    `separation`, affinely mapped to [0,1] and clamped.

    Deterministic for a fixed seed, including sample order.
    """
    if k < 2 or d < 2:
        raise InputError("need k >= 2 and d >= 2")
    if n < k:
        raise InputError("need at least one sample per class")
    if separation < 0:
        raise InputError("separation must be >= 0")
    rng = np.random.default_rng(seed)

    if d >= k:
        # simplex from the first k coordinate axes: |e_i - e_j| = sqrt(2)
        means = np.zeros((k, d))
        means[np.arange(k), np.arange(k)] = 1.0
        means -= means.mean(axis=0)
        means *= separation / np.sqrt(2.0)
    else:
        means = rng.standard_normal((k, d))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        means *= separation / np.sqrt(2.0)

    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    labels = np.concatenate([np.full(cnt, c, dtype=np.int64)
                             for c, cnt in enumerate(counts)])
    X = means[labels] + rng.standard_normal((n, d))
    order = rng.permutation(n)
    X, labels = X[order], labels[order]

    lo, hi = float(X.min()), float(X.max())
    if hi - lo < 1e-12:
        X = np.zeros_like(X)
    else:
        X = (X - lo) / (hi - lo)
    X = np.clip(X, 0.0, 1.0)
    name = f"blobs-d{d}-k{k}-n{n}-sep{separation}-seed{seed}"
    return LabeledDataset(X, labels, name=name, num_classes=k)


def _read_idx(path, expect_dtype: int = _IDX_U8) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise InputError(f"{path}: truncated magic at offset 0")
    zero1, zero2, dtype, ndim = struct.unpack_from(">BBBB", blob)
    if zero1 != 0 or zero2 != 0:
        raise InputError(f"{path}: bad magic bytes at offset 0 "
                         f"({zero1:#x} {zero2:#x})")
    if dtype != expect_dtype:
        raise InputError(f"{path}: unsupported dtype {dtype:#x} at offset 2 "
                         f"(expected {expect_dtype:#x})")
    if not 1 <= ndim <= 4:
        raise InputError(f"{path}: implausible dimension count {ndim} at offset 3")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise InputError(f"{path}: truncated dims at offset 4")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    expected = header + int(np.prod(dims))
    if len(blob) != expected:
        raise InputError(f"{path}: payload size mismatch at offset {header}: "
                         f"expected {expected} bytes total, got {len(blob)}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=header)
    return data.reshape(dims)


def load_idx_dataset(images_path, labels_path, name: str | None = None,
                     num_classes: int | None = None) -> LabeledDataset:
    """Load an IDX image/label file pair, scaling pixels to [0,1]."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise InputError(f"{labels_path}: labels must be one-dimensional")
    if images.shape[0] != labels.shape[0]:
        raise InputError(f"image/label count mismatch: {images.shape[0]} vs "
                         f"{labels.shape[0]}")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.max() >= k:
        raise InputError(f"{labels_path}: label {int(labels.max())} out of "
                         f"range for {k} classes")
    return LabeledDataset(flat, labels.astype(np.int64),
                          name=name or str(images_path), num_classes=k)


def load_csv_dataset(path, name: str | None = None,
                     num_classes: int | None = None) -> LabeledDataset:
    """Tiny-fixture reader: one `label,feature,feature,...` row per sample."""
    rows, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) < 2:
                raise InputError(f"{path}:{lineno}: need a label plus at "
                                 "least one feature")
            try:
                labels.append(int(cells[0]))
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: no samples")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"{path}: ragged rows")
    k = num_classes if num_classes is not None else max(labels) + 1
    return LabeledDataset(np.asarray(rows), np.asarray(labels),
                          name=name or str(path), num_classes=k)


def save_idx_dataset(images_path, labels_path, data: LabeledDataset) -> None:
    """Write a dataset back to IDX (pixels rounded to the u8 grid)."""
    n, d = data.inputs.shape
    pixels = np.clip(np.rint(data.inputs * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, _IDX_U8, 2))
        fh.write(struct.pack(">2I", n, d))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, _IDX_U8, 1))
        fh.write(struct.pack(">I", n))
        fh.write(data.labels.astype(np.uint8).tobytes())
