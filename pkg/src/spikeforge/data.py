"""MNIST (IDX) and CIFAR-10 (binary) loaders, normalization and batching."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateChannelError, FormatError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass(frozen=True)
class DatasetSplit:
    """Images ``[N, C, H, W]`` with integer labels ``[N]``.

    ``norm_mean`` and ``norm_std`` hold the per-channel statistics used by
    :func:`normalize`, so the same transform can be applied to a test split.
    """

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    num_classes: int = 10
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels in split {self.name!r}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes}) in split {self.name!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "DatasetSplit":
        return replace(self, images=self.images[index], labels=self.labels[index])


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _idx_header(buf: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(buf) < 4:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes is too short for an IDX header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(buf) < need:
        raise TruncatedFileError(f"{path}: header needs {need} bytes, file has {len(buf)}")
    dims = struct.unpack(f">{ndim}I", buf[4:need])
    payload = int(np.prod(dims))
    if len(buf) - need < payload:
        raise TruncatedFileError(
            f"{path}: header declares {payload} bytes of data, file holds {len(buf) - need}")
    return dims


def load_idx(images_path, labels_path, name: str = "mnist", dtype=np.float32) -> DatasetSplit:
    """Parse an IDX image/label file pair; pixels are scaled to [0, 1]."""
    img_buf, lab_buf = _read(images_path), _read(labels_path)
    n, h, w = _idx_header(img_buf, images_path, IDX_IMAGES_MAGIC, 3)
    (n_lab,) = _idx_header(lab_buf, labels_path, IDX_LABELS_MAGIC, 1)
    if n != n_lab:
        raise FormatError(f"{images_path} has {n} images but {labels_path} has {n_lab} labels")
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * h * w, offset=16)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if n and labels.max() > 9:
        raise FormatError(f"{labels_path}: label {labels.max()} outside 0-9")
    images = (pixels.reshape(n, 1, h, w) / 255.0).astype(dtype)
    return DatasetSplit(images, labels, name)


def load_cifar10_bin(paths: Sequence[str | os.PathLike] | str | os.PathLike,
                     name: str = "cifar10", dtype=np.float32) -> DatasetSplit:
    """Parse one or more CIFAR-10 binary batch files (label byte + 3072 pixels per record)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        buf = _read(path)
        if len(buf) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(buf)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0].astype(np.int64)
        if len(lab) and lab.max() > 9:
            bad = int(np.argmax(lab > 9))
            raise FormatError(f"{path}: record {bad} has label {lab[bad]}, valid range 0-9")
        labels.append(lab)
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    pixels = np.concatenate(images) if images else np.zeros((0, 3, 32, 32), np.uint8)
    lab = np.concatenate(labels) if labels else np.zeros(0, np.int64)
    return DatasetSplit((pixels / 255.0).astype(dtype), lab, name)


def normalize(split: DatasetSplit, stats: tuple[np.ndarray, np.ndarray] | None = None) -> DatasetSplit:
    """Per-channel standardization.

    Without ``stats`` the mean and std come from ``split`` itself (use this on
    the training split). Pass ``(train.norm_mean, train.norm_std)`` to apply
    training statistics to a test split.
    """
    if len(split) == 0:
        raise ValueError("cannot normalize an empty split")
    x = split.images.astype(np.float64)
    if stats is None:
        axes = (0,) + tuple(range(2, x.ndim))
        mean = x.mean(axis=axes)
        std = x.std(axis=axes)
        # rounding leaves a tiny nonzero std on constant channels
        std[np.ptp(x, axis=axes) == 0] = 0.0
    else:
        mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    if np.any(std == 0):
        bad = np.flatnonzero(std == 0).tolist()
        raise DegenerateChannelError(f"channel(s) {bad} have zero variance")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    out = (x - mean.reshape(shape)) / std.reshape(shape)
    return replace(split, images=out.astype(split.images.dtype), norm_mean=mean, norm_std=std)


def batches(split: DatasetSplit, batch_size: int, seed: int = 0, shuffle: bool = True,
            hflip: bool = False) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches; the last batch may be short.

    ``hflip`` mirrors each image horizontally with probability 1/2, drawn from
    the same seeded generator as the permutation.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(split)) if shuffle else np.arange(len(split))
    for start in range(0, len(split), batch_size):
        idx = order[start:start + batch_size]
        images = split.images[idx]
        if hflip:
            flip = rng.random(len(idx)) < 0.5
            images = images.copy()
            images[flip] = images[flip, ..., ::-1]
        yield images, split.labels[idx]


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images ``[N, H, W]`` and labels ``[N]`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels.tobytes())
