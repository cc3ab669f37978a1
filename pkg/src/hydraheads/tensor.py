"""Dense float64 tensors with reverse-mode gradients.

Every op records its parents and a backward closure on the output tensor.
``Tensor.backward`` walks that graph in reverse topological order, accumulates
gradients into leaves, then drops the graph so each forward pass gets a fresh
tape.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_RANK = 3
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class TensorError(ValueError):
    pass


class DimensionError(TensorError):
    pass


class RankError(TensorError):
    pass


class EmptyLossError(TensorError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise RankError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise TensorError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

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

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> Tensor:
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> Tensor:
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return mul(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index) -> Tensor:
        return getitem(self, index)


class Parameter(Tensor):
    """A named leaf tensor whose gradient is always allocated.

    Frozen parameters (``trainable=False``) are excluded from the graph, so no
    gradient reaches them and optimizers skip them.
    """

    __slots__ = ("name", "_trainable")

    def __init__(self, data, name: str, trainable: bool = True) -> None:
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self._trainable = trainable
        self.grad = np.zeros_like(self.data)

    @property
    def trainable(self) -> bool:
        return self._trainable

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self._trainable = bool(flag)
        self.requires_grad = bool(flag)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Accepts 2D @ 2D, batched 3D @ 2D (shared right operand) and 3D @ 3D.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"batch sizes differ: {a.shape} and {b.shape}")
    if a.ndim == 2 and b.ndim == 3:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g: np.ndarray):
        ga = g @ _swap(b.data)
        gb = _swap(a.data) @ g
        if b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise RankError(f"transpose needs a rank-2 tensor, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def swap_last(a: Tensor) -> Tensor:
    """Transpose the two trailing axes of a rank-2 or rank-3 tensor."""
    if a.ndim < 2:
        raise RankError(f"swap_last needs rank >= 2, got shape {a.shape}")
    return _make(_swap(a.data).copy(), (a,), lambda g: (_swap(g),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int)) for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return np.split(g, bounds, axis=axis)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def tsum(a: Tensor) -> Tensor:
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = a.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a last dimension >= 2, got shape {a.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"gain/bias shapes {gain.shape}, {bias.shape} do not match {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g: np.ndarray):
        reduce_axes = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=reduce_axes)
        g_bias = g.sum(axis=reduce_axes)
        gx = g * gain.data
        ga = inv_std * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return ga, g_gain, g_bias

    return _make(out, (a, gain, bias), backward)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g: np.ndarray):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)

    return _make(out, (a,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``weight`` for an integer id array of shape [b, s]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g: np.ndarray):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make(weight.data[ids], (weight,), backward)


def mse_flat(pred: Tensor, target, mask) -> Tensor:
    """Masked mean squared error.

    For a single [n, n] matrix the loss is ``sum(mask * (pred - target)**2) / sum(mask)``.
    A rank-3 batch [b, n, n] is reduced per slice first, then averaged over the
    batch, so every sentence weighs the same regardless of its length.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise DimensionError(
            f"pred {pred.shape}, target {target.shape} and mask {mask.shape} must agree"
        )
    if pred.ndim not in (2, 3):
        raise RankError(f"mse_flat expects rank 2 or 3, got shape {pred.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise TensorError("mask entries must be 0 or 1")

    batched = pred.ndim == 3
    m = mask if batched else mask[None]
    counts = m.sum(axis=(1, 2))
    if np.any(counts == 0):
        raise EmptyLossError("mask selects no cells")
    diff = (pred.data if batched else pred.data[None]) - (target if batched else target[None])
    per_item = (m * diff**2).sum(axis=(1, 2)) / counts
    nb = per_item.shape[0]

    def backward(g: np.ndarray):
        gp = float(g) * 2.0 * m * diff / counts[:, None, None] / nb
        return (gp if batched else gp[0],)

    return _make(np.array(per_item.mean()), (pred,), backward)


def mean_squared_error(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size
    return _make(np.array((diff**2).mean()), (pred,), lambda g: (float(g) * 2.0 * diff / n,))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of the true class under a row softmax."""
    if logits.ndim != 2:
        raise RankError(f"cross_entropy expects [batch, classes], got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for batch of {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(b), labels].mean()

    def backward(g: np.ndarray):
        p = np.exp(log_p)
        p[np.arange(b), labels] -= 1.0
        return (float(g) * p / b,)

    return _make(np.array(loss), (logits,), backward)


def parameters_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float((p.grad**2).sum()) for p in params if p.trainable))


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale trainable gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    params = [p for p in params if p.trainable]
    total = parameters_grad_norm(params)
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total
