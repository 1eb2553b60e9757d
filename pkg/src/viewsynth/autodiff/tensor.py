"""Reverse-mode tape: tensors record their parents and a backward closure.

Training runs in float32; the gradient checker re-executes ops on float64
tensors (ops preserve the dtype of their inputs). Gradient accumulation
order is fixed by the (deterministic) topological order of the recorded
graph, so repeated runs are bitwise identical.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError

_DEBUG_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle the finite-value assertion applied to every op output."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn = None
        self.name = name

    # -- convenience ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name})"


def parameter(data, name: str | None = None, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def make_node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap an op result; the graph is only recorded if a parent needs it."""
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Reverse accumulation from a scalar loss into every reachable tensor
    with requires_grad; unreachable parameters keep grad=None (exact zero)."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("backward on a tensor with no recorded graph")

    # iterative DFS with deterministic parent order
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
