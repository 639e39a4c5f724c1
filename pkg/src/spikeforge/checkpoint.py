"""Flat binary container for network weights and optimizer state.

Layout (little-endian throughout)::

    b"SPKF"  u32 version  u32 layer_count
    per layer:   u32 kind_tag  u32 n_tensors
      per tensor:  u32 ndim  u32 dims[ndim]  f32 values[prod(dims)]
    optional:    b"VELO"  u32 n_tensors  tensors as above

Kind tags follow :data:`KIND_TAGS`. A tdBN layer stores scale and shift, then
running mean and variance once those exist. The velocity section holds one
buffer per network parameter, in :meth:`Network.parameters` order.
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError, TruncatedFileError

MAGIC = b"SPKF"
VELOCITY_MAGIC = b"VELO"
VERSION = 1
KIND_TAGS = {"dense": 1, "conv": 2, "tdbn": 3, "neuron": 4, "flatten": 5, "pool_avg": 6, "readout": 7}
_KIND_NAMES = {v: k for k, v in KIND_TAGS.items()}


class CheckpointMismatch(ValueError):
    """A container does not fit the network it is loaded into."""


def _write_array(f: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"expected {n} bytes, file ended after {len(buf)}")
    return buf


def _read_u32(f: BinaryIO, count: int = 1):
    vals = struct.unpack(f"<{count}I", _read_exact(f, 4 * count))
    return vals[0] if count == 1 else vals


def _read_array(f: BinaryIO) -> np.ndarray:
    ndim = _read_u32(f)
    if ndim > 8:
        raise FormatError(f"implausible tensor rank {ndim}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim)) if ndim else ()
    n = int(np.prod(dims)) if dims else 1
    return np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(dims).astype(np.float32)


def _layer_tensors(layer) -> list[np.ndarray]:
    if layer.kind in ("dense", "conv"):
        return [p.data for p in layer.parameters()]
    if layer.kind == "tdbn":
        bn = layer.bn
        arrays = [bn.lam.data, bn.beta.data]
        if bn.stats_ready:
            arrays += [bn.running_mean, bn.running_var]
        return arrays
    return []


def write_container(f: BinaryIO, net, velocity: list[np.ndarray] | None = None) -> None:
    f.write(MAGIC)
    f.write(struct.pack("<II", VERSION, len(net.layers)))
    for layer in net.layers:
        arrays = _layer_tensors(layer)
        f.write(struct.pack("<II", KIND_TAGS[layer.kind], len(arrays)))
        for arr in arrays:
            _write_array(f, arr)
    if velocity is not None:
        f.write(VELOCITY_MAGIC)
        f.write(struct.pack("<I", len(velocity)))
        for v in velocity:
            _write_array(f, v)


def read_container(f: BinaryIO) -> tuple[list[tuple[str, list[np.ndarray]]], list[np.ndarray] | None]:
    """Parse a container into ``[(kind, arrays), ...]`` and optional velocity."""
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = _read_u32(f, 2)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    layers = []
    for _ in range(count):
        tag, n = _read_u32(f, 2)
        if tag not in _KIND_NAMES:
            raise FormatError(f"unknown layer kind tag {tag}")
        layers.append((_KIND_NAMES[tag], [_read_array(f) for _ in range(n)]))
    velocity = None
    tail = f.read(4)
    if tail:
        if tail != VELOCITY_MAGIC:
            raise FormatError(f"unexpected trailing section {tail!r}")
        velocity = [_read_array(f) for _ in range(_read_u32(f))]
    return layers, velocity


def save_network(path: str | os.PathLike, net, velocity: list[np.ndarray] | None = None) -> None:
    buf = io.BytesIO()
    write_container(buf, net, velocity)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_network(path: str | os.PathLike, net) -> list[np.ndarray] | None:
    """Load weights into ``net`` in place; return the velocity section if any."""
    with open(path, "rb") as f:
        layers, velocity = read_container(f)
    if len(layers) != len(net.layers):
        raise CheckpointMismatch(
            f"container has {len(layers)} layers, network has {len(net.layers)}")
    for i, ((kind, arrays), layer) in enumerate(zip(layers, net.layers)):
        if kind != layer.kind:
            raise CheckpointMismatch(f"layer {i}: container holds {kind}, network has {layer.kind}")
        expected = _layer_tensors(layer)
        allowed = (2, 4) if kind == "tdbn" else (len(expected),)
        if len(arrays) not in allowed:
            raise CheckpointMismatch(f"layer {i}: {len(arrays)} tensors, expected {len(expected)}")
        for j, arr in enumerate(arrays[:2] if layer.kind == "tdbn" else arrays):
            if arr.shape != expected[j].shape:
                raise CheckpointMismatch(
                    f"layer {i} tensor {j}: shape {arr.shape}, expected {expected[j].shape}")
    for (kind, arrays), layer in zip(layers, net.layers):
        if kind in ("dense", "conv"):
            for p, arr in zip(layer.parameters(), arrays):
                p.data = arr.astype(net.dtype)
        elif kind == "tdbn":
            bn = layer.bn
            bn.lam.data = arrays[0].astype(net.dtype)
            bn.beta.data = arrays[1].astype(net.dtype)
            if len(arrays) == 4:
                if arrays[2].shape != (bn.channels,) or arrays[3].shape != (bn.channels,):
                    raise CheckpointMismatch("tdbn running statistics have the wrong shape")
                bn.running_mean = arrays[2].astype(np.float64)
                bn.running_var = arrays[3].astype(np.float64)
            else:
                bn.running_mean = bn.running_var = None
    if velocity is not None:
        params = net.parameters()
        if len(velocity) != len(params) or any(v.shape != p.shape for v, p in zip(velocity, params)):
            raise CheckpointMismatch("velocity section does not match network parameters")
    return velocity
