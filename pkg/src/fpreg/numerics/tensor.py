"""Reverse-mode automatic differentiation over numpy arrays.

Each operation returns a :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them. ``Tensor.backward``
walks the graph in a fixed topological order, so gradients are bitwise
reproducible for identical inputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.value.size != 1:
                raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(value: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    positive = x.value > 0

    def backward(g):
        x._accumulate(g * positive)

    return _make(np.where(positive, x.value, 0.0), (x,), backward)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.value)

    def backward(g):
        x._accumulate(g * y)

    return _make(y, (x,), backward)


# reductions


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _make(np.sum(x.value, axis=axis), (x,), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# structural


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.value.reshape(shape), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.value for t in tensors], axis=ax), tensors, backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select along axis 1 per batch row: ``out[b, j] = x[b, index[b, j]]``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim < 2 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows: input {x.shape} incompatible with index {index.shape}")
    batch = np.arange(x.shape[0])[:, None]

    def backward(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, (batch, index), g)
        x._accumulate(gx)

    return _make(x.value[batch, index], (x,), backward)


def where_rows(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Pick ``a`` where ``mask`` is true, else ``b``; mask broadcasts over trailing axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"where_rows: shapes {a.shape} and {b.shape} differ")
    m = np.asarray(mask, dtype=bool)
    m = m.reshape(m.shape + (1,) * (a.ndim - m.ndim))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.where(m, g, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(m, 0.0, g))

    return _make(np.where(m, a.value, b.value), (a, b), backward)


# layers


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight has shape (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
    out = x.value @ weight.value
    if bias is not None:
        out = out + bias.value
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.value.T)
        if weight.requires_grad:
            x2 = x.value.reshape(-1, x.shape[-1])
            weight._accumulate(x2.T @ g.reshape(-1, g.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution over the time axis.

    x is (batch, time, in_channels); weight is (kernel, in_channels, out_channels)
    with an odd kernel size.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    k, cin, cout = weight.shape
    if k % 2 == 0:
        raise DimensionError(f"conv1d: kernel size must be odd, got weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv1d: bias {bias.shape} incompatible with weight {weight.shape}")
    bsz, t, _ = x.shape
    pad = k // 2
    xp = np.pad(x.value, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([xp[:, j : j + t, :] for j in range(k)], axis=2)  # (B, T, k, C)
    flat = cols.reshape(bsz * t, k * cin)
    out = (flat @ weight.value.reshape(k * cin, cout)).reshape(bsz, t, cout)
    if bias is not None:
        out = out + bias.value
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(bsz * t, cout)
        if weight.requires_grad:
            weight._accumulate((flat.T @ g2).reshape(k, cin, cout))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ weight.value.reshape(k * cin, cout).T).reshape(bsz, t, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + t, :] += gcols[:, :, j, :]
            x._accumulate(gxp[:, pad : pad + t, :])

    return _make(out, parents, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape} incompatible with gain {gamma.shape}")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.value
            x._accumulate(
                inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            )

    return _make(xhat * gamma.value + beta.value, (x, gamma, beta), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding: ids outside table of shape {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(gt)

    return _make(table.value[ids], (table,), backward)


def interp_embedding(table: Tensor, values, low: float, high: float) -> Tensor:
    """Linearly interpolated bin embedding of real ``values``.

    Bin centres are ``linspace(low, high, n_bins)``; a value between two centres
    mixes their rows, so the lookup is differentiable in the value. Values are
    clipped to ``[low, high]`` (zero gradient outside).
    """
    table, values = as_tensor(table), as_tensor(values)
    nb = table.shape[0]
    width = (high - low) / (nb - 1)
    v = values.value
    inside = (v > low) & (v < high)
    pos = (np.clip(v, low, high) - low) / width
    lo = np.minimum(np.floor(pos).astype(np.int64), nb - 2)
    frac = (pos - lo)[..., None]
    e_lo, e_hi = table.value[lo], table.value[lo + 1]
    out = e_lo * (1.0 - frac) + e_hi * frac

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.value)
            gflat = g.reshape(-1, table.shape[1])
            fflat = frac.reshape(-1, 1)
            np.add.at(gt, lo.reshape(-1), gflat * (1.0 - fflat))
            np.add.at(gt, lo.reshape(-1) + 1, gflat * fflat)
            table._accumulate(gt)
        if values.requires_grad:
            slope = (e_hi - e_lo) / width
            values._accumulate((g * slope).sum(axis=-1) * inside)

    return _make(out, (table, values), backward)


# losses


def _masked_mean(elementwise: np.ndarray, mask: np.ndarray | None) -> tuple[float, np.ndarray]:
    if mask is None:
        w = np.ones_like(elementwise)
    else:
        m = np.asarray(mask, dtype=np.float64)
        w = np.broadcast_to(m.reshape(m.shape + (1,) * (elementwise.ndim - m.ndim)), elementwise.shape)
    count = w.sum()
    if count == 0:
        return 0.0, np.zeros_like(elementwise)
    return float((elementwise * w).sum() / count), w / count


def l1_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute error over unmasked elements; mask may cover leading axes."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.value - target.value
    value, w = _masked_mean(np.abs(diff), mask)

    def backward(g):
        s = np.sign(diff) * w * g
        if pred.requires_grad:
            pred._accumulate(s)
        if target.requires_grad:
            target._accumulate(-s)

    return _make(np.array(value), (pred, target), backward)


def mse_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.value - target.value
    value, w = _masked_mean(diff * diff, mask)

    def backward(g):
        s = 2.0 * diff * w * g
        if pred.requires_grad:
            pred._accumulate(s)
        if target.requires_grad:
            target._accumulate(-s)

    return _make(np.array(value), (pred, target), backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    logp = log_softmax(logits.value)
    value = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate(p * (g / n))

    return _make(np.array(value), (logits,), backward)
