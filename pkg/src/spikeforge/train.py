"""Supervised BPTT training: cross-entropy, momentum SGD, cosine decay."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DatasetSplit, batches
from .errors import ContractError
from .network import Network, encode_input
from .neurons import NeuronConfig
from .tensor import Tensor

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "test_acc")


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    lr0: float = 0.01
    momentum: float = 0.9
    T: int = 4
    seed: int = 0
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    eval_every: int = 1
    weight_decay: float = 0.0
    hflip: bool = False

    def __post_init__(self):
        if not self.lr0 >= 0:
            raise ContractError(f"lr0 must be non-negative, got {self.lr0}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    acc: float
    lr: float
    test_acc: float | None = None


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the labelled class."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ContractError(f"logits {logits.shape} and labels {labels.shape} disagree")
    B, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ContractError(f"labels must lie in [0, {K}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / B),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def sgd_momentum_step(weights: Sequence[np.ndarray], grads: Sequence[np.ndarray | None],
                      velocity: Sequence[np.ndarray], lr: float, momentum: float) -> None:
    """In place: ``v = momentum * v + g`` then ``w -= lr * v``."""
    for w, g, v in zip(weights, grads, velocity):
        if w.shape != v.shape or (g is not None and g.shape != w.shape):
            raise ContractError(f"shape mismatch in SGD step: w {w.shape}, v {v.shape}")
        v *= momentum
        if g is not None:
            v += g
        w -= lr * v


def cosine_lr(epoch: int, total: int, lr0: float) -> float:
    if not 0 <= epoch < total:
        raise ContractError(f"epoch {epoch} outside [0, {total})")
    return lr0 * (1 + math.cos(math.pi * epoch / total)) / 2


class SGD:
    """Momentum SGD over a network's parameter tensors."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad
            if g is not None and self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        sgd_momentum_step([p.data for p in self.params], grads, self.velocity, lr, self.momentum)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train_epoch(net: Network, data: DatasetSplit, cfg: TrainConfig, optimizer: SGD,
                epoch: int = 0, lr: float | None = None) -> EpochStats:
    """One pass over ``data`` in seeded random order."""
    if len(data) == 0:
        raise ContractError("training data is empty")
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0) if lr is None else lr
    bs = min(cfg.batch_size, len(data))
    total_loss, correct, seen = 0.0, 0, 0
    for b, (x, y) in enumerate(batches(data, bs, _epoch_seed(cfg.seed, epoch), True, cfg.hflip)):
        try:
            optimizer.zero_grad()
            logits, _ = net.forward_temporal(encode_input(x.astype(net.dtype), net.T), True)
            loss = cross_entropy(logits, y)
            loss.backward()
            optimizer.step(lr)
        except Exception as e:
            e.args = (f"batch {b}: {e}",) + e.args[1:]
            raise
        total_loss += float(loss.data) * len(y)
        correct += int((logits.data.argmax(axis=1) == y).sum())
        seen += len(y)
    return EpochStats(epoch, total_loss / seen, correct / seen, lr)


def predict(net: Network, data: DatasetSplit, batch_size: int = 512, training: bool = False):
    """Class predictions for every sample, in dataset order."""
    preds = []
    for x, _ in batches(data, batch_size, shuffle=False):
        logits, _ = net.forward_temporal(encode_input(x.astype(net.dtype), net.T), training)
        preds.append(logits.data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, np.int64)


def evaluate(net: Network, data: DatasetSplit, T: int | None = None, batch_size: int = 512) -> float:
    """Inference-mode accuracy. Leaves the network untouched."""
    if T is not None and T != net.T:
        raise ContractError(f"network unrolls T={net.T}, evaluate was asked for T={T}")
    if len(data) == 0:
        return float("nan")
    return float((predict(net, data, batch_size) == data.labels).mean())


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def fit(net: Network, train: DatasetSplit, cfg: TrainConfig, test: DatasetSplit | None = None,
        metrics_path: str | os.PathLike | None = None) -> tuple[list[EpochStats], SGD]:
    """Train for ``cfg.epochs`` epochs, appending one metrics row per epoch."""
    opt = SGD(net.parameters(), cfg.momentum, cfg.weight_decay)
    history = []
    if metrics_path is not None:
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(METRICS_COLUMNS)
    for epoch in range(cfg.epochs):
        stats = train_epoch(net, train, cfg, opt, epoch)
        if test is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            stats.test_acc = evaluate(net, test)
        log.info("epoch %d lr %.3g loss %.4f train_acc %.4f test_acc %s",
                 epoch, stats.lr, stats.loss, stats.acc, _fmt(stats.test_acc))
        history.append(stats)
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(
                    [epoch, _fmt(stats.lr), _fmt(stats.loss), _fmt(stats.acc), _fmt(stats.test_acc)])
    return history, opt
