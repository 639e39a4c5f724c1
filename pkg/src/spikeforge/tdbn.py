"""Threshold-dependent batch normalization over the joint time/batch/space set."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError
from .tensor import Tensor, reduce

CHANNEL_AXIS = 2


class TdBN:
    """Per-channel normalization of ``x[T, B, C, ...]`` scaled to ``alpha * v_th``.

    Statistics are pooled over every axis except the channel axis, so all
    timesteps share one mean and variance per channel. ``lam`` and ``beta``
    are the learnable scale and shift.
    """

    def __init__(self, channels: int, alpha: float = 1.0, v_th: float = 0.5,
                 eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        self.channels = channels
        self.alpha = alpha
        self.v_th = v_th
        self.eps = eps
        self.momentum = momentum
        self.lam = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None

    def parameters(self) -> list[Tensor]:
        return [self.lam, self.beta]

    @property
    def stats_ready(self) -> bool:
        return self.running_mean is not None and self.running_var is not None

    def _broadcast_shape(self, x: Tensor) -> tuple[int, ...]:
        if x.ndim < 3 or x.shape[CHANNEL_AXIS] != self.channels:
            raise ShapeError(
                f"tdBN expects [T, B, {self.channels}, ...], got {x.shape}")
        shape = [1] * x.ndim
        shape[CHANNEL_AXIS] = self.channels
        return tuple(shape)

    def _affine(self, xc: Tensor, inv_std, bshape) -> Tensor:
        gain = self.lam.reshape(bshape) * (self.alpha * self.v_th)
        return xc * inv_std * gain + self.beta.reshape(bshape)

    def forward_train(self, x: Tensor) -> Tensor:
        bshape = self._broadcast_shape(x)
        axes = tuple(a for a in range(x.ndim) if a != CHANNEL_AXIS)
        mean = reduce(x, axes, "mean", keepdims=True)
        xc = x - mean
        var = reduce(xc * xc, axes, "mean", keepdims=True)
        inv_std = (var + self.eps) ** -0.5
        out = self._affine(xc, inv_std, bshape)

        m = self.momentum
        batch_mean = mean.data.reshape(-1)
        batch_var = var.data.reshape(-1)
        if self.stats_ready:
            self.running_mean = (1 - m) * self.running_mean + m * batch_mean
            self.running_var = (1 - m) * self.running_var + m * batch_var
        else:
            self.running_mean = batch_mean.copy()
            self.running_var = batch_var.copy()
        return out

    def forward_infer(self, x: Tensor) -> Tensor:
        if not self.stats_ready:
            raise StateError("tdBN running statistics are uninitialized; run a training step first")
        bshape = self._broadcast_shape(x)
        dtype = x.dtype
        mean = Tensor(self.running_mean.reshape(bshape).astype(dtype))
        inv_std = Tensor((1.0 / np.sqrt(self.running_var + self.eps)).reshape(bshape).astype(dtype))
        return self._affine(x - mean, inv_std, bshape)

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        return self.forward_train(x) if training else self.forward_infer(x)


def tdbn_forward_train(layer: TdBN, x: Tensor) -> Tensor:
    return layer.forward_train(x)


def tdbn_forward_infer(layer: TdBN, x: Tensor) -> Tensor:
    return layer.forward_infer(x)
