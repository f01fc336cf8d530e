"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small.  A :class:`Tensor` wraps a numpy array and
remembers which tensors produced it together with a closure that pushes
gradients back to them.  Calling :meth:`Tensor.backward` on a scalar walks
the recorded graph once in reverse topological order and accumulates into
``.grad`` fields in a fixed order, so repeated runs on identical inputs are
bit-identical.

float32 is the working precision for training; float64 is what the
finite-difference checks run in.  Ops refuse mixed-precision operands instead
of silently upcasting.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)

# Global switch consulted when deciding whether to record graph edges.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, stat updates)."""
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
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff -----------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar through every recorded ancestor.

        Leaves that require gradients but do not participate in this graph
        keep ``grad=None``; optimisers treat that as an all-zero gradient.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar, got shape {self.shape}"
            )
        order = topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
            if node is not self and node._parents:
                # Interior activations are not needed once their gradient
                # has been pushed back; dropping them caps peak memory.
                node.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def tensor(data, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor, copying ``data`` into the requested dtype."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def topological_order(root: Tensor) -> list[Tensor]:
    """Every ancestor of ``root`` ordered so parents precede children."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# -- plumbing shared by the op definitions ----------------------------------


def _check_dtype(*tensors: Tensor):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise NumericError(
                f"mixed dtypes {dt} and {t.data.dtype}; cast explicitly"
            )


def _accumulate(t: Tensor, g: np.ndarray, own: bool = True):
    """Add ``g`` into ``t.grad``.

    ``own=True`` promises that ``g`` is a freshly allocated array no other
    node will ever touch, so the first accumulation can adopt it in place of
    a copy.  Ops that forward their incoming gradient unchanged must pass
    ``own=False``.
    """
    if t.grad is None:
        if own and g.base is None and g.dtype == t.data.dtype and g.flags.writeable:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording graph edges only when they can matter."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise and reduction ops ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g, own=False)
        if b.requires_grad:
            _accumulate(b, g, own=False)

    return _make(data, (a, b), backward)


def add_scalar(a: Tensor, s: float) -> Tensor:
    data = a.data + a.data.dtype.type(s)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g, own=False)

    return _make(data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _make(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * s)

    return _make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axes)
            _accumulate(a, np.broadcast_to(gg, a.shape))

    return _make(np.asarray(data), (a,), backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- matmul ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes.

    Leading batch axes must match exactly; implicit broadcasting of batch
    dims is refused so gradients never need a reduction step.
    """
    _check_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        if not (a.ndim == 2 and b.ndim == 2):
            raise ShapeError(
                f"matmul: batch dims must match, got {a.shape} @ {b.shape}"
            )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(data, (a, b), backward)


# -- restructuring ops --------------------------------------------------------


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of rank {a.ndim}")
    inv = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.ascontiguousarray(g.transpose(inv)))

    return _make(data, (a,), backward)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    _check_dtype(*parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx[axis] = slice(int(lo), int(hi))
                _accumulate(p, np.ascontiguousarray(g[tuple(idx)]))

    return _make(data, parts, backward)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into ``sections`` equal chunks along ``axis``."""
    if a.shape[axis] % sections:
        raise ShapeError(
            f"split: axis {axis} extent {a.shape[axis]} not divisible by {sections}"
        )
    step = a.shape[axis] // sections
    outs = []
    for k in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(k * step, (k + 1) * step)
        idx = tuple(idx)
        data = np.ascontiguousarray(a.data[idx])

        def backward(g, idx=idx):
            if a.requires_grad:
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[idx] += g

        outs.append(_make(data, (a,), backward))
    return outs
