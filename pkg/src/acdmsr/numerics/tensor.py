"""Immutable tensors, a recording graph, and reverse-mode differentiation."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; the message names the dimensions."""


class NonFiniteError(ValueError):
    """Raised when NaN/Inf enters from outside or appears in a gradient."""


class Tensor:
    """A dense float array with an optional ``requires_grad`` flag.

    The backing array is made read-only so a tensor can be shared freely.
    Construction from external data rejects NaN/Inf; ops build their outputs
    through :meth:`_wrap`, which skips that scan.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=np.float32):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} contains NaN or Inf".replace("  ", " "))
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        if not isinstance(arr, np.ndarray):  # 0-d arithmetic yields numpy scalars
            arr = np.asarray(arr)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self.data.astype(dtype), self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; all route through the recorded primitives
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__


def as_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Graph:
    """Tape of primitive operations recorded while the graph is active.

    Nodes are appended in execution order, so every node's inputs are produced
    by earlier nodes (or are leaves) and the tape is acyclic by construction.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Graph":
        stack = _state.__dict__.setdefault("stack", [])
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)


_state = threading.local()


def active_graph() -> Graph | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def record(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward) -> Tensor:
    """Wrap ``out`` and, if any input needs a gradient, append a node to the active graph."""
    graph = active_graph()
    needs = graph is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        graph.record(Node(op, inputs, result, backward))
    return result


def reverse_gradients(graph: Graph, loss: Tensor) -> dict[Tensor, Tensor]:
    """Return d(loss)/d(p) for every leaf ``p`` with ``requires_grad`` reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.output) for n in graph.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    out: dict[Tensor, Tensor] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is not None:
            out[leaf] = Tensor._wrap(np.asarray(g, dtype=leaf.dtype))
    if id(loss) not in produced and loss.requires_grad:
        out[loss] = Tensor._wrap(np.ones_like(loss.data))
    return out
