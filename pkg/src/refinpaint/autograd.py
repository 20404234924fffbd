"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for the three networks: numpy arrays wrapped in a
Tensor, a closure per operation for the backward pass, and a topological
sweep at backward time.  Ops never mutate their inputs, and a graph can be
backpropagated exactly once.

Gradients are exact (up to floating point) for every op here; the test
suite checks each against central finite differences in double precision.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ShapeMismatch


class FullyMaskedRow(ValueError):
    """A softmax row with no allowed entries has no defined distribution."""


class DoubleBackward(RuntimeError):
    """backward() was called twice through the same graph."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root.  One shot per graph."""
        if self.data.size != 1:
            raise ShapeMismatch(f"backward root must be scalar, got shape {self.data.shape}")
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
            for parent in node._parents:
                stack.append((parent, False))
        # Leaves (parameters) persist across graphs; only op outputs are
        # one-shot.
        interior = [n for n in order if n._parents]
        for node in interior:
            if node._spent:
                raise DoubleBackward("this graph has already been backpropagated")
        for node in interior:
            node._spent = True
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _needs_graph(*tensors: Tensor) -> bool:
    return _grad_enabled and any(
        t.requires_grad or t._backward is not None or t._parents for t in tensors
    )


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _needs_graph(*parents):
        out._parents = parents
        out._backward = backward
    return out


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None or bool(t._parents)


def _accumulate(t: Tensor, grad, own: bool = False) -> None:
    """Add `grad` into t.grad.  `own=True` promises grad is a fresh array no
    one else holds, letting the first contribution skip its defensive copy."""
    if not _wants_grad(t):
        return
    if t.grad is None:
        if own and isinstance(grad, np.ndarray) and grad.dtype == t.data.dtype:
            t.grad = grad
        else:
            t.grad = np.array(grad, dtype=t.data.dtype)
    else:
        t.grad += grad


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting: sum grad down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- elementwise and structural ops -------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if _wants_grad(a):
            ga = _reduce_to_shape(g, a.data.shape)
            _accumulate(a, ga, own=ga is not g)
        if _wants_grad(b):
            gb = _reduce_to_shape(g, b.data.shape)
            _accumulate(b, gb, own=gb is not g)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if _wants_grad(a):
            _accumulate(a, _reduce_to_shape(g * b.data, a.data.shape), own=True)
        if _wants_grad(b):
            _accumulate(b, _reduce_to_shape(g * a.data, b.data.shape), own=True)

    return _make(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar without changing the array dtype."""
    a = _as_tensor(a)
    s = float(s)
    data = a.data * s

    def backward(g):
        _accumulate(a, g * s, own=True)

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if _wants_grad(a):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _reduce_to_shape(ga, a.data.shape), own=True)
        if _wants_grad(b):
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _reduce_to_shape(gb, b.data.shape), own=True)

    return _make(data, (a, b), backward)


def transpose(a: Tensor, dim0: int = -2, dim1: int = -1) -> Tensor:
    a = _as_tensor(a)
    data = np.swapaxes(a.data, dim0, dim1)

    def backward(g):
        _accumulate(a, np.swapaxes(g, dim0, dim1))

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat_last_dim(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[..., offset : offset + w])
            offset += w

    return _make(data, tuple(parts), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full, own=True)

    return _make(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = _as_tensor(a)
    data = np.asarray(a.data.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy(), own=True)

    return _make(data, (a,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.data.shape[0]:
        raise ShapeMismatch(
            f"ids outside table of {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accumulate(table, gt, own=True)

    return _make(data, (table,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias with weight of shape [in, out]."""
    return add(matmul(x, weight), bias)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        d = x.data.shape[-1]
        dxhat = g * gain.data
        gx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, gx.astype(x.data.dtype, copy=False), own=True)
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes), own=True)
        _accumulate(bias, g.sum(axis=reduce_axes), own=True)

    return _make(data, (x, gain, bias), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))  # python float: no float64 promotion


def gelu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.data
    inner = v * v
    inner *= 0.044715 * _GELU_C
    inner += _GELU_C
    inner *= v  # _GELU_C * (v + 0.044715 v^3)
    tanh = np.tanh(inner)
    data = 0.5 * v * (1.0 + tanh)

    def backward(g):
        dinner = v * v
        dinner *= 3 * 0.044715 * _GELU_C
        dinner += _GELU_C
        grad = 1.0 - tanh * tanh
        grad *= v * dinner
        grad += 1.0 + tanh
        grad *= 0.5
        grad *= g
        _accumulate(x, grad.astype(v.dtype, copy=False), own=True)

    return _make(data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-p) at train time."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ShapeMismatch(f"dropout p={p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    draw_dtype = np.float32 if x.data.dtype == np.float32 else np.float64
    keep = (rng.random(x.data.shape, dtype=draw_dtype) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    data = x.data * keep

    def backward(g):
        _accumulate(x, g * keep, own=True)

    return _make(data, (x,), backward)


# --- attention softmax and losses ---------------------------------------------


def masked_softmax(scores: Tensor, allow: np.ndarray) -> Tensor:
    """Row softmax with disallowed entries forced to exactly zero.

    `allow` is a boolean matrix over the last two dims (broadcastable to the
    scores' shape).  Disallowed logits get an additive -inf before the
    softmax, so their weights and their gradients are exactly zero.
    """
    scores = _as_tensor(scores)
    allow = np.asarray(allow, dtype=bool)
    if not np.broadcast_shapes(allow.shape, scores.data.shape) == scores.data.shape:
        raise ShapeMismatch(f"allow {allow.shape} not broadcastable to scores {scores.data.shape}")
    if not allow.any(axis=-1).all():
        raise FullyMaskedRow("a row allows no entries")
    masked = np.where(allow, scores.data, -np.inf)
    masked -= masked.max(axis=-1, keepdims=True)
    np.exp(masked, out=masked)
    masked /= masked.sum(axis=-1, keepdims=True)
    data = masked

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(scores, (data * (g - inner)).astype(scores.data.dtype, copy=False), own=True)

    return _make(data, (scores,), backward)


def _select_mask(shape, position_mask) -> np.ndarray:
    if position_mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(position_mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeMismatch(f"position mask {mask.shape} does not match positions {shape}")
    return mask


def cross_entropy(logits: Tensor, targets: np.ndarray, position_mask=None) -> Tensor:
    """Mean negative log-likelihood over the selected positions.

    `logits` is [..., V], `targets` holds class ids over the leading dims and
    `position_mask` selects which positions contribute.  No selected
    positions gives loss 0 with zero gradient.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.data.shape}")
    sel = _select_mask(targets.shape, position_mask)
    n_sel = int(sel.sum())
    if n_sel == 0:
        return _make(np.asarray(0.0, dtype=logits.data.dtype), (logits,), lambda g: None)

    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    data = np.asarray(((lse - picked) * sel).sum() / n_sel, dtype=z.dtype)

    def backward(g):
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(z)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        grad = (soft - onehot) * sel[..., None] * (g / n_sel)
        _accumulate(logits, grad.astype(z.dtype, copy=False), own=True)

    return _make(data, (logits,), backward)


def bce_with_logits(logits: Tensor, labels: np.ndarray, position_mask=None) -> Tensor:
    """Mean binary cross-entropy over the selected positions (stable form)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=logits.data.dtype)
    if labels.shape != logits.data.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs logits {logits.data.shape}")
    sel = _select_mask(labels.shape, position_mask)
    n_sel = int(sel.sum())
    if n_sel == 0:
        return _make(np.asarray(0.0, dtype=logits.data.dtype), (logits,), lambda g: None)

    z = logits.data
    per = np.maximum(z, 0.0) - z * labels + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray((per * sel).sum() / n_sel, dtype=z.dtype)

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        grad = (sig - labels) * sel * (g / n_sel)
        _accumulate(logits, grad.astype(z.dtype, copy=False), own=True)

    return _make(data, (logits,), backward)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Plain numpy sigmoid for turning feedback logits into probabilities."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
