"""Dense tensors, the operation tape, and reverse-mode differentiation."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes do not satisfy an operation's requirements."""


class NumericError(ArithmeticError):
    """A computation produced a NaN or infinity."""


class GraphError(RuntimeError):
    """Invalid use of the recording or backward machinery."""


def check_finite(array: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{context}: non-finite values encountered")


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer.

    ``data`` is a row-major numpy float array: float32 for training, float64
    for gradient checking. ``requires_grad`` marks leaves (parameters) whose
    gradients are collected by :meth:`Graph.backward`; gradients of frozen
    leaves are simply never written. A tensor that has entered a graph must
    be treated as immutable until that graph is discarded.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same data that is cut off from any recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, context: str = "tensor") -> None:
        check_finite(self.data, context)

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.add(self, other)

    def __mul__(self, factor: float) -> "Tensor":
        from . import ops

        return ops.scale(self, float(factor))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_local = threading.local()


def _graph_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_graph() -> Optional["Graph"]:
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Insertion-ordered tape of executed operations.

    Operations run inside a ``with Graph():`` block append themselves in
    execution order, so every node's inputs precede it and the tape is
    acyclic by construction. :meth:`backward` replays the tape in exact
    reverse insertion order. Graphs are independent of one another; separate
    graphs may be used concurrently on separate threads.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _graph_stack().pop()
        if popped is not self:
            raise GraphError("graph contexts exited out of order")

    def record(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable) -> None:
        self.nodes.append(_Node(op, inputs, output, backward_fn))
        self._produced.add(id(output))

    def tracks(self, tensor: Tensor) -> bool:
        """Whether gradients must flow to ``tensor`` during backward."""
        return tensor.requires_grad or id(tensor) in self._produced

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every requires-grad leaf.

        Contributions from fan-out are summed. Raises :class:`GraphError` if
        ``loss`` is not a scalar produced by this graph.
        """
        if loss.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise GraphError("loss tensor was not produced by this graph")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            gout = pending.pop(id(node.output), None)
            if gout is None:
                continue
            needs = tuple(self.tracks(t) for t in node.inputs)
            gins = node.backward_fn(gout, needs)
            for tensor, grad, needed in zip(node.inputs, gins, needs):
                if not needed or grad is None:
                    continue
                tid = id(tensor)
                acc = pending.get(tid)
                pending[tid] = grad if acc is None else acc + grad
                if tensor.requires_grad:
                    leaves.setdefault(tid, tensor)
        for tid, tensor in leaves.items():
            grad = pending.pop(tid)
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def record_op(op: str, inputs: tuple, output: Tensor, backward_fn: Callable) -> None:
    """Append an executed op to the active graph, if any input is tracked."""
    graph = active_graph()
    if graph is None:
        return
    if not any(graph.tracks(t) for t in inputs):
        return
    graph.record(op, inputs, output, backward_fn)


@contextlib.contextmanager
def frozen(tensors: Iterable[Tensor]):
    """Temporarily clear ``requires_grad`` so backward skips these leaves."""
    tensors = list(tensors)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag
