"""Layered spiking networks unrolled over T timesteps.

Execution is block-wise. Stateless layers (dense, conv, pooling, tdBN) see
all timesteps at once as a merged ``T*B`` batch, which is what lets tdBN pool
its statistics over time. Neuron layers then run their recurrence
sequentially over ``t``. The readout averages its input current over time
and never spikes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ShapeError, SpecError
from .neurons import NeuronConfig, NeuronState, StepRecord, neuron_step
from .tdbn import TdBN
from .tensor import Tensor, conv2d, reduce, stack

LAYER_KINDS = ("dense", "conv", "tdbn", "neuron", "flatten", "pool_avg", "readout")


@dataclass
class LayerSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    T: int = 4
    seed: int = 0
    input_shape: tuple[int, ...] | None = None


@dataclass
class TemporalActivations:
    """Per-timestep neuron intermediates, keyed by layer index."""

    T: int
    neurons: dict[int, list[StepRecord]] = field(default_factory=dict)
    readout_current: Tensor | None = None

    def stacked(self, layer: int, name: str) -> np.ndarray:
        """Array ``[T, B, ...]`` of one of ``h``, ``h_hat``, ``o``, ``u``."""
        return np.stack([getattr(rec, name).data for rec in self.neurons[layer]])


# -- layers -------------------------------------------------------------------

def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float64, bias: bool = True):
        self.w = Tensor(_kaiming_uniform(rng, (n_in, n_out), n_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        out = x @ self.w
        return out + self.b if self.b is not None else out


class Conv:
    kind = "conv"

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, pad: int,
                 rng, dtype=np.float64, bias: bool = True):
        fan_in = c_in * kernel * kernel
        self.w = Tensor(_kaiming_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        self.stride, self.pad = stride, pad

    def parameters(self):
        return [self.w] + ([self.b] if self.b is not None else [])

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        out = conv2d(x, self.w, self.stride, self.pad)
        if self.b is not None:
            out = out + self.b.reshape(1, -1, 1, 1)
        return out


class Flatten:
    kind = "flatten"

    def parameters(self):
        return []

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        return x.reshape(x.shape[0], -1)


class AvgPool:
    kind = "pool_avg"

    def __init__(self, size: int):
        self.size = size

    def parameters(self):
        return []

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        n, c, h, w = x.shape
        k = self.size
        if h % k or w % k:
            raise ShapeError(f"pool size {k} does not divide spatial extent {h}x{w}")
        return reduce(x.reshape(n, c, h // k, k, w // k, k), (3, 5), "mean")


class Neuron:
    kind = "neuron"

    def __init__(self, cfg: NeuronConfig):
        self.cfg = cfg

    def parameters(self):
        return []


class Norm:
    kind = "tdbn"

    def __init__(self, bn: TdBN):
        self.bn = bn

    def parameters(self):
        return self.bn.parameters()


class Readout:
    kind = "readout"

    def parameters(self):
        return []


def readout_accumulate(currents: Tensor) -> Tensor:
    """Mean over time of the readout's input current ``[T, B, K] -> [B, K]``."""
    return reduce(currents, 0, "mean")


def encode_input(x, T: int) -> Tensor:
    """Present a static input identically at each of ``T`` timesteps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return Tensor(np.repeat(data[None], T, axis=0))


# -- spec validation ------------------------------------------------------------

def _param(spec: LayerSpec, index: int, name: str, default=None):
    if name in spec.params:
        return spec.params[name]
    if default is None:
        raise SpecError(index, f"{spec.kind} layer is missing parameter {name!r}")
    return default


def validate_spec(spec: NetworkSpec) -> None:
    """Check kind names, readout placement, encoding order, and shape composition."""
    if spec.T < 1:
        raise SpecError(0, f"T must be >= 1, got {spec.T}")
    if not spec.layers:
        raise SpecError(0, "network has no layers")
    seen_param = False
    readouts = [i for i, l in enumerate(spec.layers) if l.kind == "readout"]
    if len(readouts) != 1:
        raise SpecError(readouts[1] if len(readouts) > 1 else len(spec.layers) - 1,
                        f"expected exactly one readout layer, found {len(readouts)}")
    if readouts[0] != len(spec.layers) - 1:
        raise SpecError(readouts[0], "readout must be the last layer")

    # ("flat", n) | ("map", c, h, w) | None when unknown
    feat = None
    if spec.input_shape is not None:
        s = tuple(spec.input_shape)
        feat = ("flat", s[0]) if len(s) == 1 else ("map",) + s
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind not in LAYER_KINDS:
            raise SpecError(i, f"unknown layer kind {kind!r}")
        if kind == "dense":
            n_in, n_out = _param(layer, i, "in"), _param(layer, i, "out")
            if feat is not None:
                if feat[0] != "flat":
                    raise SpecError(i, f"dense layer needs flat input, got map {feat[1:]}")
                if feat[1] != n_in:
                    raise SpecError(i, f"dense expects {n_in} inputs, previous layer gives {feat[1]}")
            feat = ("flat", n_out)
            seen_param = True
        elif kind == "conv":
            c_in, c_out = _param(layer, i, "in"), _param(layer, i, "out")
            k = _param(layer, i, "kernel")
            stride, pad = layer.params.get("stride", 1), layer.params.get("pad", 0)
            if feat is not None:
                if feat[0] != "map" or feat[1] != c_in:
                    raise SpecError(i, f"conv expects {c_in}-channel maps, got {feat}")
                _, _, h, w = feat
                if (h + 2 * pad - k) % stride or (w + 2 * pad - k) % stride or k > h + 2 * pad:
                    raise SpecError(i, f"conv kernel {k}/stride {stride}/pad {pad} does not tile {h}x{w}")
                feat = ("map", c_out, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)
            seen_param = True
        elif kind == "tdbn":
            c = _param(layer, i, "channels")
            if feat is not None and feat[1] != c:
                raise SpecError(i, f"tdbn has {c} channels, previous layer gives {feat[1]}")
        elif kind == "neuron":
            if not seen_param:
                raise SpecError(i, "first neuron layer must follow a parameterized layer")
        elif kind == "flatten":
            if feat is not None and feat[0] == "map":
                feat = ("flat", feat[1] * feat[2] * feat[3])
        elif kind == "pool_avg":
            k = _param(layer, i, "size")
            if feat is not None:
                if feat[0] != "map" or feat[2] % k or feat[3] % k:
                    raise SpecError(i, f"pool size {k} does not divide {feat}")
                feat = ("map", feat[1], feat[2] // k, feat[3] // k)
        elif kind == "readout":
            if feat is not None and feat[0] != "flat":
                raise SpecError(i, "readout needs flat per-class currents")


# -- network --------------------------------------------------------------------

class Network:
    """A built spiking network. Construct with :func:`build_network`."""

    def __init__(self, spec: NetworkSpec, dtype=np.float64):
        validate_spec(spec)
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(spec.seed)
        self.layers = []
        for layer in spec.layers:
            p = layer.params
            if layer.kind == "dense":
                self.layers.append(Dense(p["in"], p["out"], rng, dtype, p.get("bias", True)))
            elif layer.kind == "conv":
                self.layers.append(Conv(p["in"], p["out"], p["kernel"], p.get("stride", 1),
                                        p.get("pad", 0), rng, dtype, p.get("bias", True)))
            elif layer.kind == "tdbn":
                self.layers.append(Norm(TdBN(p["channels"], alpha=p.get("alpha", 1.0),
                                             v_th=p.get("v_th", 0.5), eps=p.get("eps", 1e-5),
                                             momentum=p.get("momentum", 0.1), dtype=dtype)))
            elif layer.kind == "neuron":
                self.layers.append(Neuron(p.get("config", NeuronConfig())))
            elif layer.kind == "flatten":
                self.layers.append(Flatten())
            elif layer.kind == "pool_avg":
                self.layers.append(AvgPool(p["size"]))
            else:
                self.layers.append(Readout())

    @property
    def T(self) -> int:
        return self.spec.T

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def neuron_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "neuron"]

    def forward_temporal(self, x_seq, training: bool = True) -> tuple[Tensor, TemporalActivations]:
        """Run the network over ``x_seq[T, B, ...]``.

        Returns the readout ``[B, classes]`` and the recorded neuron activity.
        """
        x_seq = x_seq if isinstance(x_seq, Tensor) else Tensor(x_seq, dtype=self.dtype)
        if x_seq.dtype != self.dtype:
            x_seq = Tensor(x_seq.data.astype(self.dtype))
        T = self.T
        if x_seq.ndim < 2 or x_seq.shape[0] != T:
            raise ShapeError(f"input must be [T={T}, B, ...], got {x_seq.shape}")
        B = x_seq.shape[1]
        acts = TemporalActivations(T)
        x = x_seq.reshape(T * B, *x_seq.shape[2:])
        readout = None
        for i, layer in enumerate(self.layers):
            if layer.kind == "neuron":
                x = self._run_neurons(i, layer.cfg, x, T, B, acts)
                continue
            try:
                if layer.kind == "tdbn":
                    y = layer.bn(x.reshape(T, B, *x.shape[1:]), training)
                    x = y.reshape(T * B, *x.shape[1:])
                elif layer.kind == "readout":
                    currents = x.reshape(T, B, *x.shape[1:])
                    acts.readout_current = currents
                    readout = readout_accumulate(currents)
                else:
                    x = layer(x, training)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}), all timesteps: {e}") from None
        return readout, acts

    def _run_neurons(self, index, cfg, x, T, B, acts) -> Tensor:
        xs = x.reshape(T, B, *x.shape[1:])
        state = NeuronState.initial(xs.shape[1:], cfg, self.dtype)
        records, spikes = [], []
        for t in range(T):
            try:
                rec = neuron_step(state, xs[t], cfg)
            except ShapeError as e:
                raise ShapeError(f"layer {index} (neuron), timestep {t}: {e}") from None
            records.append(rec)
            spikes.append(rec.o)
            state = NeuronState(rec.u, t + 1)
        acts.neurons[index] = records
        return stack(spikes).reshape(T * B, *x.shape[1:])

    def __call__(self, x_seq, training: bool = True) -> Tensor:
        return self.forward_temporal(x_seq, training)[0]


def build_network(spec: NetworkSpec, dtype=np.float64) -> Network:
    return Network(spec, dtype)


def forward_temporal(net: Network, x_seq, training: bool = True):
    return net.forward_temporal(x_seq, training)


def mlp_spec(sizes: list[int], neuron: NeuronConfig, T: int = 4, seed: int = 0,
             tdbn: bool = True, alpha: float = 1.0, flatten: bool = False) -> NetworkSpec:
    """``sizes=[784, 256, 10]`` gives dense-tdbn-neuron blocks then a readout layer."""
    layers = [LayerSpec("flatten")] if flatten else []
    for n_in, n_out in zip(sizes[:-2], sizes[1:-1]):
        layers.append(LayerSpec("dense", {"in": n_in, "out": n_out}))
        if tdbn:
            layers.append(LayerSpec("tdbn", {"channels": n_out, "alpha": alpha, "v_th": neuron.v_th}))
        layers.append(LayerSpec("neuron", {"config": neuron}))
    layers.append(LayerSpec("dense", {"in": sizes[-2], "out": sizes[-1]}))
    layers.append(LayerSpec("readout"))
    return NetworkSpec(layers, T=T, seed=seed)
