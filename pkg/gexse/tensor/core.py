"""
Dense float64 tensors with reverse-mode automatic differentiation
"""
import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from wrapt import synchronized

from gexse.misc import NumericError, ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_node_counter = itertools.count(1)
_state = threading.local()


@synchronized
def _next_node_id() -> int:
    return next(_node_counter)


def grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad() -> Iterator[None]:
    """ Disables graph recording for the current thread """
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """
    Immutable multi-dimensional array of float64 values.
    A tensor produced by an op remembers its parents and the rule that maps
    the cotangent of its output to the cotangents of its inputs.
    """
    # numpy operands defer to Tensor's reflected operators
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self._init(np.array(data, dtype=np.float64), requires_grad, name)

    def _init(self, array: np.ndarray, requires_grad: bool, name: Optional[str]) -> None:
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id = _next_node_id()
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return 'Tensor(shape={}, op={}, requires_grad={})'.format(
            self.shape, self.op, self.requires_grad)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError('item() needs a single element, got shape {}'.format(self.shape))
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zero(self) -> np.ndarray:
        """ Accumulated gradient, zeros when the tensor was never reached """
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __add__(self, other) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other) -> 'Tensor':
        return sub(self, other)

    def __rsub__(self, other) -> 'Tensor':
        return sub(other, self)

    def __mul__(self, other) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other) -> 'Tensor':
        return mul(other, self)

    def __truediv__(self, other) -> 'Tensor':
        return div(self, other)

    def __rtruediv__(self, other) -> 'Tensor':
        return div(other, self)

    def __neg__(self) -> 'Tensor':
        return neg(self)

    def __matmul__(self, other) -> 'Tensor':
        from gexse.tensor.ops import matmul
        return matmul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn,
              op: str) -> Tensor:
    """
    Wraps the result of an op.
    :param data: forward value, owned by the new tensor
    :param parents: input tensors, in the order backward returns their grads
    :param backward: maps the output cotangent to one cotangent per parent
    :param op: op name used in diagnostics
    :return: Tensor
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericError('{} produced non-finite values'.format(op))
    out = Tensor.__new__(Tensor)
    requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    out._init(data, requires_grad, None)
    out.op = op
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """ Sums grad over the axes numpy broadcasting added or stretched """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        'add',
    )


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        'sub',
    )


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        'mul',
    )


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericError('division by zero in tensor of shape {}'.format(b.shape))
    return make_node(
        a.data / b.data, (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape),
                   unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        'div',
    )


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), 'neg')


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tensor_sum(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    return make_node(
        x.data.sum(axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims),),
        'sum',
    )


def tensor_mean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    if count == 0:
        raise ShapeError('mean over an empty axis of shape {}'.format(x.shape))
    return make_node(
        x.data.mean(axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,),
        'mean',
    )


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError('cannot reshape {} into {}'.format(x.shape, tuple(shape)))
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), 'reshape')


def transpose(x: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), 'transpose')


def take(x: TensorLike, index) -> Tensor:
    """ Differentiable x[index]; repeated fancy indices accumulate """
    x = as_tensor(x)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_node(x.data[index], (x,), backward, 'getitem')


class Tape:
    """
    Operations reachable from a root, in topological order.
    Only nodes that require gradients are recorded, every input of a node
    precedes it, and each node appears once.
    """

    def __init__(self, nodes: List[Tensor]) -> None:
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def record(cls, root: Tensor) -> 'Tape':
        order: List[Tensor] = []
        if not root.requires_grad:
            return cls(order)
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in visited:
                continue
            visited.add(node.node_id)
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and parent.node_id not in visited:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """
    Propagates d(loss)/d(leaf) into the .grad of every tracked leaf.
    Repeated calls accumulate into existing grads.
    :param loss: scalar tensor
    :param tape: optional pre-recorded tape of loss
    :return: None
    """
    if loss.data.size != 1:
        raise ShapeError('backward needs a scalar loss, got shape {}'.format(loss.shape))
    if not loss.requires_grad:
        logger.debug('backward on a constant loss, nothing to propagate')
        return
    tape = tape if tape is not None else Tape.record(loss)

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + parent_grad
            else:
                grads[parent.node_id] = parent_grad
