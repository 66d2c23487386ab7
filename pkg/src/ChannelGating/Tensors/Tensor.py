"""
Tensor and tape classes.

A Tensor holds a contiguous numpy array in the active precision. Tensors
produced by a Function keep a reference to it (their creator); the creator
keeps its input tensors and whatever context it saved during forward, which
is all backward() needs to walk the tape in reverse.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .constants import CHECK_DTYPE, DEFAULT_DTYPE

logger = logging.getLogger("Tensor")


_precision = threading.local()


def get_dtype():
    return getattr(_precision, "dtype", DEFAULT_DTYPE)


@contextmanager
def precision(dtype=CHECK_DTYPE) -> Iterator[None]:
    """
    Temporarily switch the precision new tensors are created in.
    The 64-bit mode exists for gradient checks; training and inference run in 32-bit.
    Precision is per thread, like the tape itself.
    """
    previous = get_dtype()
    _precision.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _precision.dtype = previous


class Function:
    """
    One recorded operation on the tape.

    Subclasses implement forward() on numpy arrays and backward(), which
    receives dL/d(output) and returns one gradient (or None) per input.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs: Tuple["Tensor", ...] = inputs
        self.saved: dict = {}

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}: forward not implemented")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__}: backward not implemented")

    def needs_grad(self, index: int) -> bool:
        return self.inputs[index].requires_grad

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(i) for i in inputs)
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """
    Sum out the dimensions numpy broadcasting added, so grad matches shape.
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


class Tensor:
    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        name: Optional[str] = None,
    ):
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=get_dtype())
        self.requires_grad: bool = requires_grad
        self.creator: Optional[Function] = creator
        self.grad: Optional[np.ndarray] = None
        self.name: Optional[str] = name

    def __repr__(self):
        label = f"{self.name}, " if self.name is not None else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def backward(self):
        backward(self)

    # Arithmetic
    def __add__(self, other: Any) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other: Any) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return Mul.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __truediv__(self, other: float) -> "Tensor":
        return Mul.apply(self, 1.0 / other)

    def sum(self, axis: Optional[int | Tuple[int, ...]] = None) -> "Tensor":
        return Sum.apply(self, axis=axis)

    def mean(self, axis: Optional[int | Tuple[int, ...]] = None) -> "Tensor":
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return Sum.apply(self, axis=axis) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        return Reshape.apply(self, shape=shape)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return (
            grad * b.data if self.needs_grad(0) else None,
            grad * a.data if self.needs_grad(1) else None,
        )


class Sum(Function):
    def forward(self, a, axis=None):
        self.saved["axis"] = axis
        return np.asarray(a.sum(axis=axis))

    def backward(self, grad):
        shape = self.inputs[0].shape
        axis = self.saved["axis"]
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, shape),)


class Reshape(Function):
    def forward(self, a, shape=()):
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


def _topological_order(root: Tensor) -> List[Tensor]:
    """
    Post-order over the tensors that require grad: every tensor comes after its inputs.
    """
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for inp in node.creator.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
    return order


def backward(root: Tensor, inputs: Optional[Sequence[Tensor]] = None) -> Optional[List[np.ndarray]]:
    """
    Reverse-mode sweep from a scalar root.

    Leaf tensors with requires_grad accumulate dRoot/dLeaf into .grad, so
    repeated calls without zeroing add up. When inputs are given, their
    gradients are returned, zeros for the ones the root does not reach.
    """
    if root.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")

    if root.requires_grad:
        order = _topological_order(root)
        grads = {id(root): np.ones_like(root.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                node.grad = grad.astype(node.data.dtype, copy=True) if node.grad is None else node.grad + grad
                continue
            input_grads = node.creator.backward(grad)
            for inp, inp_grad in zip(node.creator.inputs, input_grads):
                if inp_grad is None or not inp.requires_grad:
                    continue
                inp_grad = unbroadcast(np.asarray(inp_grad), inp.shape)
                key = id(inp)
                grads[key] = grads[key] + inp_grad if key in grads else inp_grad
    else:
        logger.debug("backward: root does not require grad, nothing to do")

    if inputs is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
