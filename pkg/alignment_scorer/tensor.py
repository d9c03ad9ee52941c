"""
Dense tensors with reverse-mode differentiation.

The primitive set is exactly what the scoring network needs: matmul,
add/sub/mul, silu, softmax (optionally causal), log-softmax, RMS
normalisation, embedding lookup (indexing), reductions, concatenation,
slicing, reshape and transpose. Every primitive checks its output for
NaN/Inf and raises NonFiniteError naming itself.
"""
import logging
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is None:
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            dtype = data.dtype
        else:
            dtype = np.float64
    return np.asarray(data, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """
    Sum a broadcast gradient back down to `shape`
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    Immutable value node of a computation graph
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'op', 'name', '_parents', '_backward')
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str = None, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(name or 'input')
        self.grad = None
        self.requires_grad = requires_grad
        self.op = 'leaf'
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: tuple, op: str, backward) -> 'Tensor':
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        out.name = None
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f'item() needs a single element, got shape {self.shape}')
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = self.name or self.op
        return f'Tensor({label}, shape={self.shape})'

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._node(a.data + b.data, (a, b), 'add', backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._node(a.data - b.data, (a, b), 'sub', backward)

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __neg__(self):
        def backward(g):
            return (-g,)

        return Tensor._node(-self.data, (self,), 'neg', backward)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._node(a.data * b.data, (a, b), 'mul', backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ShapeError('division is only supported by a constant scalar')
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other, self.dtype), self)

    def __getitem__(self, index):
        source = self
        if isinstance(index, Tensor):
            raise ShapeError('tensors cannot be used as indices')

        def backward(g):
            grad = np.zeros_like(source.data)
            np.add.at(grad, index, g)
            return (grad,)

        return Tensor._node(np.array(source.data[index]), (source,), 'index', backward)

    # -- shape ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as e:
            raise ShapeError(f'cannot reshape {original} to {shape}') from e

        def backward(g):
            return (g.reshape(original),)

        return Tensor._node(data, (self,), 'reshape', backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g):
            return (g.transpose(inverse),)

        return Tensor._node(self.data.transpose(axes), (self,), 'transpose', backward)

    @property
    def T(self):
        return self.transpose()

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._node(
            np.array(self.data.sum(axis=axis, keepdims=keepdims)), (self,), 'sum', backward
        )

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        if count == 0:
            raise ShapeError('mean over an empty axis')
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- differentiation --------------------------------------------------

    def _topological_order(self) -> list:
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray = None):
        """
        Accumulate d(self)/d(leaf) into `.grad` of every leaf that requires grad
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f'backward() without a seed gradient needs a scalar, got {self.shape}')
            grad = np.ones_like(self.data)
        pending = {id(self): grad}
        for node in reversed(self._topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(parent_grad)):
                    raise NonFiniteError(f'{node.op} (backward)')
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product with numpy broadcasting over leading axes; a 1-D right
    operand is treated as a column vector
    """
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim == 0 or b.ndim == 0 or (a.ndim == 1 and b.ndim == 1):
        raise ShapeError(f'matmul needs a matrix operand, got {a.shape} @ {b.shape}')
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f'matmul shape mismatch: {a.shape} @ {b.shape}')

    def backward(g):
        a2 = a.data if a.ndim > 1 else a.data[None, :]
        b2 = b.data if b.ndim > 1 else b.data[:, None]
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        grad_a = g2 @ np.swapaxes(b2, -1, -2)
        grad_b = np.swapaxes(a2, -1, -2) @ g2
        if a.ndim == 1:
            grad_a = grad_a[..., 0, :]
        if b.ndim == 1:
            grad_b = grad_b[..., 0]
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor._node(np.matmul(a.data, b.data), (a, b), 'matmul', backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return Tensor._node(x.data * s, (x,), 'silu', backward)


def softmax(x: Tensor, axis: int = -1, causal: bool = False, blocked: np.ndarray = None) -> Tensor:
    """
    Softmax along `axis`. With `causal`, the last two axes must be square and
    entries above the diagonal get exactly zero probability; `blocked`
    (broadcastable boolean) zeroes further entries the same way. Every row
    must keep at least one entry.
    """
    data = x.data
    if causal:
        if axis not in (-1, x.ndim - 1) or x.ndim < 2 or x.shape[-1] != x.shape[-2]:
            raise ShapeError(f'causal softmax needs square trailing axes, got {x.shape}')
        n = x.shape[-1]
        future = np.triu(np.ones((n, n), dtype=bool), k=1)
        blocked = future if blocked is None else (future | blocked)
    if blocked is not None:
        data = np.where(blocked, -np.inf, data)
    shifted = data - data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return Tensor._node(probs, (x,), 'softmax', backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._node(out, (x,), 'log_softmax', backward)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """
    y = x / sqrt(mean(x^2) + eps) * gain, over the last axis
    """
    gain = as_tensor(gain, x.dtype)
    if gain.shape != (x.shape[-1],):
        raise ShapeError(f'rms_norm gain {gain.shape} does not match width {x.shape[-1]}')
    scale = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    normed = x.data * scale

    def backward(g):
        gg = g * gain.data
        grad_x = scale * (gg - normed * (gg * normed).mean(axis=-1, keepdims=True))
        grad_gain = (g * normed).reshape(-1, x.shape[-1]).sum(axis=0)
        return grad_x, grad_gain

    return Tensor._node(normed * gain.data, (x, gain), 'rms_norm', backward)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f'embedding ids out of range for table of {table.shape[0]} rows')
    return table[ids]


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError('concat of an empty list')
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f'concat shape mismatch: {[p.shape for p in parts]}') from e

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._node(data, tuple(parts), 'concat', backward)
