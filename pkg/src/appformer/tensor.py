"""
Dense float64 tensors with reverse-mode gradients.

Every differentiable operation returns a new :class:`Tensor` holding a
reference to its inputs and a closure that maps the output gradient to
input gradients. :meth:`Tensor.backward` walks the graph in reverse
topological order and accumulates into ``.grad``.

Only what the model needs is implemented. Binary ops broadcast like numpy
and reduce gradients back to the operand shape.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError, VocabLookupError

DTYPE = np.float64
_add_reduce = np.add.reduce
MASK_VALUE = -1e9


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a finite sum rules out NaN and inf; only an overflowing sum needs the full scan
    if math.isfinite(_add_reduce(arr, axis=None)):
        return
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op=""):
        arr = np.asarray(data, dtype=DTYPE)
        if not _op:
            _check_finite(arr, "input")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self._op = _op

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # -- autograd -----------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every tensor that requires it and feeds this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            _check_finite(g, f"backward through {node._op or 'leaf'}")
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A leaf tensor that always requires a gradient and carries a dotted name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(data, op)
    op = op or "op"
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g):
        return (g * mask,)

    return _result(out, (x,), backward, "relu")


# -- shape manipulation ------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over any leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # shared weight: one GEMM over the flattened leading axes
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _result(out, (a, b), backward, "matmul")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(sorted(range(len(axes)), key=axes.__getitem__))
    out = np.transpose(x.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(out, (x,), backward, "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tuple(tensors), backward, "concat")


def index(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    out = np.array(x.data[key], dtype=DTYPE, copy=True)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(out, (x,), backward, "index")


# -- reductions --------------------------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- neural-network primitives ----------------------------------------------
def softmax_rows(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` after subtracting the row maximum."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (biased) variance, then apply ``gamma*x+beta``."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs a feature dimension >= 2, got {x.shape}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {d}")
    # sums divided by d avoid the per-call overhead of ndarray.mean
    mu = _add_reduce(x.data, axis=-1, keepdims=True) / d
    xc = x.data - mu
    var = _add_reduce(xc * xc, axis=-1, keepdims=True) / d
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv_std * (
                gh - _add_reduce(gh, axis=-1, keepdims=True) / d - xhat * (_add_reduce(gh * xhat, axis=-1, keepdims=True) / d)
            )
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def backward(g):
        return (g * keep,)

    return _result(out, (x,), backward, "dropout")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; repeated ids accumulate their gradients."""
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise VocabLookupError(f"embedding ids must be integers, got dtype {ids.dtype}")
    n = table.shape[0]
    bad = ids[(ids < 0) | (ids >= n)]
    if bad.size:
        raise VocabLookupError(f"embedding id {int(bad.flat[0])} out of range for table of {n} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result(out, (table,), backward, "embedding")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def cross_entropy(logits: Tensor, labels, smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under row-softmax of ``logits``.

    With ``smoothing`` the target is ``(1-smoothing)*onehot + smoothing/C``.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (batch, classes) logits and (batch,) labels, got {logits.shape} / {labels.shape}")
    n_classes = logits.shape[1]
    bad = labels[(labels < 0) | (labels >= n_classes)]
    if bad.size:
        raise VocabLookupError(f"label {int(bad[0])} out of range for {n_classes} classes")
    batch = len(labels)
    rows = np.arange(batch)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    target = np.full(logits.shape, smoothing / n_classes)
    target[rows, labels] += 1.0 - smoothing
    out = np.asarray(-(target * logp).sum() / batch)

    def backward(g):
        return ((np.exp(logp) - target) * (g / batch),)

    return _result(out, (logits,), backward, "cross_entropy")


def sinusoidal_table(max_len: int, d_model: int) -> np.ndarray:
    """Fixed positional table: even columns sine, odd columns cosine."""
    pos = np.arange(max_len, dtype=DTYPE)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=DTYPE)
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.zeros((max_len, d_model), dtype=DTYPE)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table


def causal_mask(length: int) -> np.ndarray:
    """Additive mask: 0 where key <= query, ``MASK_VALUE`` above the diagonal."""
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(upper, MASK_VALUE, 0.0)


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``||a - n|| / max(||a||, ||n||)``.

    Elementwise ratios blow up on entries that are zero up to rounding, so
    the comparison is made over the whole array.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return diff / den


__all__ = [
    "Tensor",
    "Parameter",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "relu",
    "matmul",
    "reshape",
    "transpose",
    "swap_last",
    "concat",
    "index",
    "tsum",
    "tmean",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "embedding_lookup",
    "linear",
    "cross_entropy",
    "sinusoidal_table",
    "causal_mask",
    "numerical_gradient",
    "relative_error",
]
