"""Spiking neuron dynamics.

All three neuron kinds share one step::

    H[t] = f(U[t-1], X[t])          integrate (IF: U+X, LIF: tau*U+X)
    Ĥ[t] = phi(H[t])                optional membrane potential rectifier
    O[t] = Θ(Ĥ[t] - v_th)           fire
    U[t] = reset(H[t], O[t])        hard: H(1-O)+v_reset*O, soft: H-O

The rectifier only changes what the step function sees. The carried state
always resets from the unmodulated ``H``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor, broadcast_shape

_TANH_3_2 = float(np.tanh(1.5))
_EDGE_SCALE = 1.0 / (2.0 * _TANH_3_2 * float(np.cosh(1.5)))
MPR_MID_SLOPE = 3.0 / (2.0 * _TANH_3_2)


class NeuronKind(str, enum.Enum):
    IF = "if"
    LIF = "lif"
    SRIF = "srif"


@dataclass(frozen=True)
class NeuronConfig:
    """Parameters of a spiking neuron layer.

    ``tau`` is only read by LIF neurons. ``spiking=False`` replaces the step
    function with the integral of its surrogate (a clipped ramp) so that
    finite differences and the backward pass describe the same function.
    """

    kind: NeuronKind = NeuronKind.SRIF
    v_th: float = 0.5
    v_reset: float = 0.0
    tau: float = 0.5
    surrogate_width: float = 1.0
    use_mpr: bool = False
    detach_reset: bool = False
    spiking: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", NeuronKind(self.kind))
        if not self.v_th > self.v_reset:
            raise ContractError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if not 0.0 < self.tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.surrogate_width > 0:
            raise ContractError(f"surrogate_width must be positive, got {self.surrogate_width}")

    def with_(self, **changes) -> "NeuronConfig":
        return replace(self, **changes)


@dataclass
class NeuronState:
    u: Tensor
    t: int = 0

    @classmethod
    def initial(cls, shape, cfg: NeuronConfig, dtype=np.float64) -> "NeuronState":
        return cls(Tensor(np.full(shape, cfg.v_reset, dtype=dtype)), 0)


class StepRecord(NamedTuple):
    h: Tensor
    h_hat: Tensor
    o: Tensor
    u: Tensor


# -- step function and surrogate ---------------------------------------------

def heaviside(x):
    """Θ(x): 1 where x >= 0, else 0. No gradient."""
    if isinstance(x, Tensor):
        return Tensor((x.data >= 0).astype(x.dtype))
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    return (x >= 0).astype(dtype)


def surrogate_grad(x, width: float = 1.0):
    """Rectangular stand-in for dΘ/dx: 1/width inside |x| < width/2."""
    if not width > 0:
        raise ContractError(f"surrogate width must be positive, got {width}")
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
    return (np.abs(x) < width / 2).astype(x.dtype) / x.dtype.type(width)


def fire(h_hat: Tensor, v_th: float, width: float = 1.0, spiking: bool = True) -> Tensor:
    """Emit spikes Θ(h_hat - v_th) with the rectangular surrogate in backward."""
    z = h_hat.data - h_hat.dtype.type(v_th)
    if spiking:
        out = (z >= 0).astype(h_hat.dtype)
    else:
        out = np.clip(z / width + 0.5, 0.0, 1.0).astype(h_hat.dtype)
    sg = surrogate_grad(z, width)
    return Tensor.from_op(out, (h_hat,), lambda g: (g * sg,), "fire")


# -- membrane potential rectifier ---------------------------------------------

def _phi_edge(v: np.ndarray) -> np.ndarray:
    # middle piece for v in [0, 1/4]: tanh(3v - 3/2) + tanh(3/2) rewritten
    # as sinh(3v) / (cosh(3v - 3/2) cosh(3/2)) so phi(v) keeps full relative
    # precision as v -> 0
    return np.sinh(3.0 * v) / np.cosh(3.0 * v - 1.5) * _EDGE_SCALE


def _phi(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    lo, hi = u < 0, u > 1
    near0 = (u >= 0) & (u < 0.25)
    near1 = (u > 0.75) & (u <= 1)
    center = (u >= 0.25) & (u <= 0.75)
    out[lo] = 1.0 - np.cbrt(1.0 - u[lo])
    out[hi] = np.cbrt(u[hi])
    out[near0] = _phi_edge(u[near0])
    out[near1] = 1.0 - _phi_edge(1.0 - u[near1])
    # centered form keeps sign(phi(u) - 1/2) == sign(u - 1/2) exactly
    out[center] = np.tanh(3.0 * (u[center] - 0.5)) / (2.0 * _TANH_3_2) + 0.5
    return out


def _phi_grad(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    lo, hi = u < 0, u > 1
    mid = ~(lo | hi)
    out[lo] = (1.0 - u[lo]) ** (-2.0 / 3.0) / 3.0
    out[hi] = u[hi] ** (-2.0 / 3.0) / 3.0
    out[mid] = MPR_MID_SLOPE / np.cosh(3.0 * (u[mid] - 0.5)) ** 2
    return out


def _float_array(u) -> np.ndarray:
    u = np.asarray(u)
    return u if np.issubdtype(u.dtype, np.floating) else u.astype(np.float64)


def mpr(u):
    """Membrane potential rectifier phi.

    Pulls potentials toward 0 and 1 while keeping phi(1/2) = 1/2, so that
    no potential crosses the 0.5 threshold. Accepts a :class:`Tensor`
    (differentiable) or anything array-like (returns a plain array, or a
    float for scalar input).
    """
    if isinstance(u, Tensor):
        out = _phi(u.data)
        return Tensor.from_op(out, (u,), lambda g: (g * _phi_grad(u.data),), "mpr")
    arr = _float_array(u)
    out = _phi(np.atleast_1d(arr)).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def mpr_grad(u):
    """Analytic derivative of :func:`mpr`; u in {0, 1} takes the middle-piece value."""
    if isinstance(u, Tensor):
        return Tensor(_phi_grad(u.data))
    arr = _float_array(u)
    out = _phi_grad(np.atleast_1d(arr)).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def quantization_error(u, v_th: float = 0.5):
    """Squared distance (u - o)^2 between a potential and its spike o = Θ(u - v_th)."""
    if isinstance(u, Tensor):
        u = u.data
    u = _float_array(u)
    o = (u >= v_th).astype(u.dtype)
    err = (u - o) ** 2
    return float(err) if err.ndim == 0 else err


# -- single-timestep dynamics ---------------------------------------------------

def _check(state: NeuronState, x: Tensor) -> None:
    if state.u.shape != x.shape:
        try:
            if broadcast_shape(state.u.shape, x.shape) == state.u.shape:
                return
        except ShapeError:
            pass
        raise ShapeError(f"input shape {x.shape} does not match state shape {state.u.shape}")


def neuron_step(state: NeuronState, x: Tensor, cfg: NeuronConfig) -> StepRecord:
    """Advance one timestep and return every intermediate of the update."""
    _check(state, x)
    if cfg.kind is NeuronKind.LIF:
        h = state.u * cfg.tau + x
    else:
        h = state.u + x
    h_hat = mpr(h) if cfg.use_mpr else h
    o = fire(h_hat, cfg.v_th, cfg.surrogate_width, cfg.spiking)
    o_reset = o.detach() if cfg.detach_reset else o
    if cfg.kind is NeuronKind.SRIF:
        u = h - o_reset
    else:
        u = h * (1.0 - o_reset) + o_reset * cfg.v_reset
    return StepRecord(h, h_hat, o, u)


def step(state: NeuronState, x, cfg: NeuronConfig) -> tuple[Tensor, NeuronState]:
    """One timestep for any neuron kind. Returns (spikes, new state)."""
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=state.u.dtype)
    rec = neuron_step(state, x, cfg)
    return rec.o, NeuronState(rec.u, state.t + 1)


def _require(cfg: NeuronConfig, kind: NeuronKind, mpr_on: bool | None = None):
    if cfg.kind is not kind:
        raise ContractError(f"expected a {kind.value} neuron config, got {cfg.kind.value}")
    if mpr_on is not None and cfg.use_mpr != mpr_on:
        raise ContractError(f"use_mpr must be {mpr_on} here")


def if_step(state: NeuronState, x, cfg: NeuronConfig):
    _require(cfg, NeuronKind.IF)
    return step(state, x, cfg)


def lif_step(state: NeuronState, x, cfg: NeuronConfig):
    _require(cfg, NeuronKind.LIF)
    return step(state, x, cfg)


def srif_step(state: NeuronState, x, cfg: NeuronConfig):
    _require(cfg, NeuronKind.SRIF, mpr_on=False)
    return step(state, x, cfg)


def srif_mpr_step(state: NeuronState, x, cfg: NeuronConfig):
    _require(cfg, NeuronKind.SRIF, mpr_on=True)
    return step(state, x, cfg)


def run_sequence(inputs, cfg: NeuronConfig, dtype=np.float64) -> list[StepRecord]:
    """Drive one neuron (or an array of independent neurons) through a sequence."""
    seq = [np.asarray(v, dtype=dtype) for v in inputs]
    if not seq:
        return []
    state = NeuronState.initial(seq[0].shape, cfg, dtype)
    records = []
    for v in seq:
        rec = neuron_step(state, Tensor(v), cfg)
        records.append(rec)
        state = NeuronState(rec.u, state.t + 1)
    return records
