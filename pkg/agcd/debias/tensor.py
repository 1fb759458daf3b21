"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation builds its result with `Tensor.from_op`,
handing over the parents it was computed from and a closure mapping the
gradient of the result to the gradients of the parents. `Tensor.backward`
walks the recorded graph in reverse topological order, visiting every node
exactly once, and accumulates gradients into the leaves.

Broadcasting is restricted to scalar-with-tensor and equal shapes, anything
else has to go through `Tensor.expand` explicitly.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from logging import getLogger
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .const import LOGGER_NAME, DType
from .errors import GraphError, NumericalError, ShapeError

log = getLogger(LOGGER_NAME)

Scalar = Union[int, float]
Operand = Union["Tensor", int, float]
Gradients = Tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[np.ndarray], Gradients]

_grad_state = threading.local()


def grad_enabled() -> bool:
    """Returns False inside a `no_grad` block of the current thread"""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Do not record any graph inside this block (current thread only)"""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(data, dtype: Optional[DType]) -> np.ndarray:
    if isinstance(data, np.generic):
        data = np.asarray(data)
    if isinstance(data, np.ndarray) and dtype is None:
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(DType.F32.numpy)
    dtype = dtype or DType.F32
    return np.asarray(data, dtype=dtype.numpy)


class Tensor:
    """N-dimensional array of f32 or f64 values with an optional gradient

    >>> x = Tensor([1.0, 2.0, 3.0], dtype=DType.F64, requires_grad=True)
    >>> loss = (x * x).sum()
    >>> loss.backward()
    >>> x.grad.tolist()
    [2.0, 4.0, 6.0]
    """

    def __init__(self,
                 data,
                 dtype: Optional[DType] = None,
                 requires_grad: bool = False):
        self.data: np.ndarray = _as_array(data, dtype)
        self.requires_grad: bool = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op: str = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence[Tensor],
                backward: BackwardFn, op: str) -> Tensor:
        """Wrap the result of an operation and record it in the graph"""
        if not np.isfinite(data).all():
            raise NumericalError(f"{op} produced non-finite values")
        out = cls(data)
        out.op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # --- properties ---

    @property
    def shape(self) -> Tuple[int, ...]:
        """Extents of every axis"""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of axes"""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements"""
        return self.data.size

    @property
    def dtype(self) -> DType:
        """Element type"""
        return DType.of(self.data)

    @property
    def is_leaf(self) -> bool:
        """True for tensors not produced by a recorded operation"""
        return self._backward is None

    def item(self) -> float:
        """The value of a single element tensor"""
        if self.size != 1:
            raise ShapeError(f"item() of a tensor with shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A copy of the data"""
        return self.data.copy()

    def detach(self) -> Tensor:
        """The same data outside of any graph"""
        return Tensor(self.data)

    def zero_grad(self):
        """Forget the accumulated gradient"""
        self.grad = None

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return (f"Tensor(shape={self.shape}, dtype={self.dtype}, "
                f"op={self.op}{grad})")

    # --- autodiff ---

    def _topological_order(self) -> List[Tensor]:
        """Nodes that need a gradient, parents before children"""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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

    def backward(self):
        """Populate `grad` of every leaf this scalar depends on"""
        if self.size != 1:
            raise GraphError(
                f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("The loss does not depend on any tensor "
                             "that requires a gradient")
        if self._consumed:
            raise GraphError("backward() was already called on this graph, "
                             "recompute the loss first")
        order = self._topological_order()
        log.debug("Backward through %d nodes", len(order))
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None \
                    else node.grad + grad
                continue
            parent_grads = node._backward(grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
        self._consumed = True

    # --- elementwise ---

    def _operand(self, other: Operand) -> Tensor:
        """Coerce python scalars, check the broadcasting rule"""
        if not isinstance(other, Tensor):
            return Tensor(np.asarray(other, dtype=self.data.dtype))
        if other.data.dtype != self.data.dtype:
            raise ShapeError(f"dtype mismatch: {self.dtype} and "
                             f"{other.dtype}")
        if other.shape != self.shape and other.ndim != 0 \
                and self.ndim != 0:
            raise ShapeError(f"shapes {self.shape} and {other.shape} are "
                             f"neither equal nor scalar")
        return other

    def __add__(self, other: Operand) -> Tensor:
        other = self._operand(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(grad):
            return _reduce_to(grad, a_shape), _reduce_to(grad, b_shape)

        return Tensor.from_op(self.data + other.data, (self, other),
                             backward, "add")

    def __radd__(self, other: Operand) -> Tensor:
        return self + other

    def __sub__(self, other: Operand) -> Tensor:
        other = self._operand(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(grad):
            return _reduce_to(grad, a_shape), _reduce_to(-grad, b_shape)

        return Tensor.from_op(self.data - other.data, (self, other),
                             backward, "sub")

    def __rsub__(self, other: Operand) -> Tensor:
        return self._operand(other) - self

    def __mul__(self, other: Operand) -> Tensor:
        other = self._operand(other)
        a, b = self.data, other.data

        def backward(grad):
            return (_reduce_to(grad * b, a.shape),
                    _reduce_to(grad * a, b.shape))

        return Tensor.from_op(a * b, (self, other), backward, "mul")

    def __rmul__(self, other: Operand) -> Tensor:
        return self * other

    def __neg__(self) -> Tensor:
        return Tensor.from_op(-self.data, (self, ), lambda grad: (-grad, ),
                              "neg")

    def scale(self, factor: Scalar) -> Tensor:
        """Multiply by a constant"""
        factor_ = self.data.dtype.type(factor)
        return Tensor.from_op(self.data * factor_, (self, ),
                              lambda grad: (grad * factor_, ), "scale")

    def abs(self) -> Tensor:
        """Elementwise absolute value, the subgradient at 0 is 0"""
        sign = np.sign(self.data)
        return Tensor.from_op(np.abs(self.data), (self, ),
                              lambda grad: (grad * sign, ), "abs")

    # --- reductions ---

    def sum(self,
            axis: Union[None, int, Tuple[int, ...]] = None,
            keepdims: bool = False) -> Tensor:
        """Sum over `axis` (all axes by default)"""
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(grad):
            if not keepdims:
                grad = np.expand_dims(grad, axes)
            return (np.broadcast_to(grad, shape).copy(), )

        return Tensor.from_op(self.data.sum(axis=axes, keepdims=keepdims),
                              (self, ), backward, "sum")

    def mean(self,
             axis: Union[None, int, Tuple[int, ...]] = None,
             keepdims: bool = False) -> Tensor:
        """Arithmetic mean over `axis` (all axes by default)"""
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)
        count = 1
        for ax in axes:
            count *= shape[ax]

        def backward(grad):
            if not keepdims:
                grad = np.expand_dims(grad, axes)
            return (np.broadcast_to(grad / count, shape).copy(), )

        data = self.data.sum(axis=axes, keepdims=keepdims) / count
        return Tensor.from_op(data, (self, ), backward, "mean")

    # --- shape ---

    def reshape(self, *shape) -> Tensor:
        """Same data, new extents"""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as err:
            raise ShapeError(str(err)) from None
        return Tensor.from_op(data, (self, ),
                              lambda grad: (grad.reshape(old_shape), ),
                              "reshape")

    def permute(self, *axes) -> Tensor:
        """Reorder the axes"""
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(self.ndim)):
            raise ShapeError(f"{axes} is not a permutation of "
                             f"{self.ndim} axes")
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(
            np.ascontiguousarray(self.data.transpose(axes)), (self, ),
            lambda grad: (grad.transpose(inverse), ), "permute")

    @property
    def T(self) -> Tensor:
        """Swap the last two axes"""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.permute(axes)

    def expand(self, *shape) -> Tensor:
        """Explicit broadcast to `shape`: new leading axes or size-1 axes"""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape
        lead = len(shape) - len(old_shape)
        if lead < 0 or any(
                src not in (1, dst)
                for src, dst in zip(old_shape, shape[lead:])):
            raise ShapeError(f"can not expand {old_shape} to {shape}")
        stretched = tuple(lead + i for i, (src, dst) in
                          enumerate(zip(old_shape, shape[lead:]))
                          if src == 1 and dst != 1)

        def backward(grad):
            grad = grad.sum(axis=stretched, keepdims=True)
            return (grad.sum(axis=tuple(range(lead))), )

        return Tensor.from_op(
            np.ascontiguousarray(np.broadcast_to(self.data, shape)),
            (self, ), backward, "expand")

    # --- products ---

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis, )
    return tuple(sorted(ax % ndim for ax in axis))


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to a scalar operand"""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes must be equal

    >>> a = Tensor([[1, 2], [3, 4]], dtype=DType.F64)
    >>> b = Tensor([[5, 6], [7, 8]], dtype=DType.F64)
    >>> matmul(a, b).data.tolist()
    [[19.0, 22.0], [43.0, 50.0]]
    """
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul of {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} and {b.dtype}")
    a_data, b_data = a.data, b.data

    def backward(grad):
        return (np.matmul(grad, np.swapaxes(b_data, -1, -2)),
                np.matmul(np.swapaxes(a_data, -1, -2), grad))

    return Tensor.from_op(np.matmul(a_data, b_data), (a, b), backward,
                          "matmul")


def parameter(data, dtype: DType) -> Tensor:
    """A leaf that requires a gradient"""
    return Tensor(np.array(data, dtype=dtype.numpy), requires_grad=True)
