"""Dense N-d arrays with define-by-run reverse-mode differentiation.

Every differentiable operation builds an output :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to one gradient per
parent. :meth:`Tensor.backward` walks that graph in reverse topological order.
The graph is rebuilt on each forward pass; nothing here mutates its inputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if np.issubdtype(data.dtype, np.floating):
            return data
        return data.astype(np.float64)
    return np.asarray(data, dtype=dtype or np.float64)


class Tensor:
    """An array that can take part in reverse-mode differentiation.

    Parameters
    ----------
    data : array_like
        Values. Floating arrays keep their dtype; everything else becomes
        float64 unless ``dtype`` is given.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = ""

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"],
                backward: BackwardFn, op: str) -> "Tensor":
        """Wrap the result of a primitive operation.

        ``backward`` receives the gradient of the output and returns one entry
        per parent (``None`` for parents that receive no gradient).
        """
        parents = tuple(parents)
        out = cls(data)
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph traversal ----------------------------------------------------

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable tensor.

        Gradients add onto whatever ``grad`` already holds, so repeated calls
        without :meth:`zero_grad` accumulate.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topo_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operator sugar -----------------------------------------------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, power(self._lift(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axes=None, keepdims=False):
        return reduce(self, axes, "sum", keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce(self, axes, "mean", keepdims)

    def var(self, axes=None, keepdims=False):
        return reduce(self, axes, "var", keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- broadcasting helpers ---------------------------------------------------

def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Shape obtained by padding the shorter shape with leading 1s and expanding 1s."""
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing leading-1 expansion."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    broadcast_shape(a.shape, b.shape)
    return Tensor.from_op(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return Tensor.from_op(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def cbrt(a: Tensor) -> Tensor:
    out = np.cbrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g / (3 * out * out),), "cbrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def compare_ge(a: Tensor, b) -> Tensor:
    """1 where ``a >= b`` else 0. Carries no gradient."""
    b = b.data if isinstance(b, Tensor) else b
    if isinstance(b, np.ndarray):
        broadcast_shape(a.shape, b.shape)
    return Tensor((a.data >= b).astype(a.dtype))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "scale": scale, "tanh": tanh,
    "cbrt": cbrt, "power": power, "relu": relu, "compare_ge": compare_ge,
}


def elementwise(op: str, *args):
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return Tensor.from_op(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation of ``x[B,C,H,W]`` with ``w[F,C,kh,kw]``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    B, C, H, W = x.shape
    F, _, kh, kw = w.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if kh > Hp or kw > Wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if (Hp - kh) % stride or (Wp - kw) % stride:
        raise ShapeError(
            f"non-integral conv output: ({Hp}-{kh})/{stride}, ({Wp}-{kw})/{stride}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # B,C,Ho,Wo,kh,kw
    out = np.einsum("bchwij,fcij->bfhw", win, w.data, optimize=True)

    def backward(g):
        gw = np.einsum("bchwij,bfhw->fcij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                    np.einsum("bfhw,fc->bchw", g, w.data[:, :, i, j], optimize=True)
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return gx, gw

    return Tensor.from_op(out, (x, w), backward, "conv2d")


# -- reductions -------------------------------------------------------------

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ContractError(f"axis {ax} out of range for ndim {ndim}")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ContractError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(norm))


def reduce(x: Tensor, axes=None, kind: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum, mean, or population variance (divisor n) over ``axes``."""
    axes = _norm_axes(axes, x.ndim)
    if x.ndim and not axes:
        raise DomainError("empty reduction set")
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise DomainError(f"reduction over zero elements of shape {x.shape}")

    def expand(g):
        return g if keepdims else np.expand_dims(g, axes)

    if kind == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)
        return Tensor.from_op(
            out, (x,), lambda g: (np.broadcast_to(expand(g), x.shape).copy(),), "sum")
    if kind == "mean":
        out = x.data.mean(axis=axes, keepdims=keepdims)
        return Tensor.from_op(
            out, (x,), lambda g: (np.broadcast_to(expand(g) / n, x.shape).copy(),), "mean")
    if kind == "var":
        centered = x.data - x.data.mean(axis=axes, keepdims=True)
        out = (centered * centered).mean(axis=axes, keepdims=keepdims)
        return Tensor.from_op(
            out, (x,), lambda g: (expand(g) * (2.0 / n) * centered,), "var")
    raise ContractError(f"unknown reduction {kind!r}")


# -- shape manipulation -----------------------------------------------------

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(
        x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
               for i in items)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(out, (x,), backward, "getitem")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, backward, "stack")
