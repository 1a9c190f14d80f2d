"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable primitive is a
:class:`Function` subclass with a ``forward`` and a ``backward`` static
method; calling ``SomeFunction.apply(...)`` runs the forward pass and, when
gradients are being tracked, records the output as a graph node pointing at
its parents.  :func:`backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from types import SimpleNamespace
from typing import Iterator, Optional

import numpy as np

from .errors import ShapeError

_state = SimpleNamespace(grad_enabled=True, dtype=np.dtype(np.float32))


def default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created tensors.

    Training runs in float32; gradient checks switch to float64 with
    ``with precision(np.float64): ...``.
    """
    prev = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def grad_enabled() -> bool:
    return _state.grad_enabled


class Tensor:
    """An n-dimensional float array that doubles as a graph node.

    ``op`` names the primitive that produced the tensor (``None`` for
    leaves), ``parents`` are the input tensors of that primitive, and
    ``grad`` is filled in by :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_fn", "_ctx", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_state.dtype)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op: Optional[str] = None
        self.parents: tuple = ()
        self._fn = None
        self._ctx = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def isfinite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op}{flag})"

    # arithmetic sugar; the functions live in ops to keep this module small
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.neg(as_tensor(other)))

    def __rsub__(self, other):
        from . import ops
        return ops.add(as_tensor(other), ops.neg(self))

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_state.dtype))


class Function:
    """Base class for differentiable primitives.

    ``forward(ctx, *arrays, **kwargs)`` returns the output array and may
    stash anything needed later on ``ctx``.  ``backward(ctx, grad)`` returns
    one gradient per input array (``None`` where no gradient is needed).
    """

    name = "function"

    @staticmethod
    def forward(ctx, *arrays, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        ctx = SimpleNamespace(needs_grad=tuple(t.requires_grad for t in tensors))
        out = cls.forward(ctx, *(t.data for t in tensors), **kwargs)
        result = Tensor(out)
        if _state.grad_enabled and any(ctx.needs_grad):
            result.requires_grad = True
            result.op = cls.name
            result.parents = tensors
            result._fn = cls
            result._ctx = ctx
        return result


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` for every node that ``root`` depends on.

    Gradients sum over fan-out.  Leaf gradients accumulate across calls;
    call ``zero_grad`` on parameters between optimisation steps.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ShapeError("root does not depend on any tensor that requires grad")

    order = _topological_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        input_grads = node._fn.backward(node._ctx, g)
        if not isinstance(input_grads, tuple):
            input_grads = (input_grads,)
        for parent, pg in zip(node.parents, input_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise ShapeError(
                    f"{node.op} backward produced grad {pg.shape} for input {parent.data.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=_state.dtype), requires_grad=True, name=name)

