"""Dataset loading (IDX and CIFAR-10 binary), normalization and batching.

Images are staged as float64 in [0, 1]; :func:`batches` normalizes and rounds
them into the forward format.  That rounding is the only float -> posit
boundary of a training run.
"""
from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Kind, a_from_float64, is_posit

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class DataError(ValueError):
    """Malformed or missing dataset files."""


@dataclass
class Dataset:
    images: np.ndarray          # float64 (N, C, H, W)
    labels: np.ndarray          # int64 (N,)
    split: str = "train"
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels must be in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return replace(self, images=self.images[:n], labels=self.labels[:n])


def _open(path: str | os.PathLike):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if not path.exists():
        raise DataError(f"missing dataset file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        data = f.read()
    if len(data) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise DataError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    body = data[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(body) != need:
        raise DataError(f"{path}: expected {need} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", name: str = "") -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[1:] != (28, 28):
        raise DataError(f"{images_path}: images are {images.shape[1:]}, expected 28x28")
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), split, name)


def load_idx_dir(root, split: str = "train", name: str = "") -> Dataset:
    """Standard file names (``train-images-idx3-ubyte`` / ``t10k-...``) under ``root``."""
    prefix = "train" if split == "train" else "t10k"
    root = Path(root)
    return load_idx(root / f"{prefix}-images-idx3-ubyte", root / f"{prefix}-labels-idx1-ubyte",
                    split, name)


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    with _open(path) as f:
        data = f.read()
    if len(data) % CIFAR_RECORD:
        raise DataError(f"{path}: size {len(data)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataError(f"{path}: label out of range")
    # R, G and B planes of 1024 bytes each, row-major 32x32
    images = rec[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(root, split: str = "train") -> Dataset:
    root = Path(root)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    files = ([root / f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train"
             else [root / "test_batch.bin"])
    parts = [read_cifar_batch(p) for p in files]
    images = np.concatenate([p[0] for p in parts]).astype(np.float64) / 255.0
    labels = np.concatenate([p[1] for p in parts])
    return Dataset(images, labels, split, "cifar10")


def channel_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    mean = ds.images.mean(axis=(0, 2, 3))
    std = ds.images.std(axis=(0, 2, 3))
    return mean, std


def normalize(ds: Dataset, mean, std) -> Dataset:
    """``(x - mean) / std`` per channel, still in float64 staging."""
    mean = np.asarray(mean, dtype=np.float64).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(1, -1, 1, 1)
    if np.any(std <= 0):
        raise DataError("std must be positive")
    meta = dict(ds.meta, mean=mean.ravel().tolist(), std=std.ravel().tolist())
    return replace(ds, images=(ds.images - mean) / std, meta=meta)


def fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded Fisher-Yates permutation of ``range(n)``."""
    perm = np.arange(n)
    # draw all swap indices up front: j_i uniform in [0, i]
    js = (rng.random(n) * (np.arange(n) + 1)).astype(np.int64)
    for i in range(n - 1, 0, -1):
        j = js[i]
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def quantize(images: np.ndarray, kind: Kind) -> np.ndarray:
    """Round staged images into ``kind`` (the counted float -> posit boundary)."""
    return a_from_float64(images, kind)


def batches(ds: Dataset, batch_size: int, seed: int | None, kind: Kind, *,
            epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Mini-batches of (inputs in ``kind``, labels).

    ``seed=None`` keeps file order.  Otherwise the permutation depends on
    ``(seed, epoch)`` only.  The last batch may be smaller.
    """
    if batch_size <= 0:
        raise ValueError("batch size must be positive")
    n = len(ds)
    order = np.arange(n) if seed is None else fisher_yates(
        n, np.random.default_rng([seed, epoch]))
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield quantize(ds.images[idx], kind), ds.labels[idx]


def describe_kind(kind: Kind) -> str:
    return kind.spec if is_posit(kind) else kind.name
