"""Dense float64 tensors recorded on an explicit reverse-mode tape."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NonFiniteError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class _Node:
    parents: tuple[Optional[int], ...]
    backward: Optional[BackwardFn]
    shape: tuple[int, ...] = ()
    name: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return self.backward is None


class Tape:
    """Append-only record of operations.

    A node's parents always have smaller indices than the node itself, so a
    single reverse sweep in insertion order is a valid topological replay.
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, data, name: Optional[str] = None) -> "Tensor":
        """Register ``data`` as a differentiable leaf and return its tensor."""
        t = Tensor(data)
        self._nodes.append(_Node((), None, t.shape, name))
        return Tensor(t.data, tape=self, node=len(self._nodes) - 1)

    def record(self, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        ids = []
        for p in parents:
            if p.node is not None and p.tape is not self:
                raise ValueError("operands live on different tapes")
            ids.append(p.node)
        self._nodes.append(_Node(tuple(ids), backward, data.shape))
        return Tensor(data, tape=self, node=len(self._nodes) - 1)

    def node(self, index: int) -> _Node:
        return self._nodes[index]


class Tensor:
    """Immutable n-d array; ``node`` is its handle on ``tape`` (None for constants)."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, tape: Optional[Tape] = None, node: Optional[int] = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor of shape {arr.shape}")
        arr = arr.view()
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape if node is not None else None
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not a supported primitive")
        return ops.mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def record(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op result; record it only when some parent is on a tape."""
    tape = None
    for p in parents:
        if p.node is not None:
            tape = p.tape
            break
    if tape is None:
        return Tensor(data)
    return tape.record(data, parents, backward)


class Gradients:
    """Mapping from watched leaf tensors to their gradient arrays."""

    def __init__(self, by_node: dict[int, np.ndarray]):
        self._by_node = by_node

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.node is None or t.node not in self._by_node:
            raise KeyError("tensor is not a watched leaf of this tape")
        return self._by_node[t.node]

    def __contains__(self, t: Tensor) -> bool:
        return t.node is not None and t.node in self._by_node

    def __len__(self) -> int:
        return len(self._by_node)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Gradients:
    """Reverse sweep from scalar ``loss``; returns the gradient of every watched leaf.

    Leaves the loss does not depend on receive zeros; constants never appear.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss.tape
    if tape is None or loss.node is None:
        raise ValueError("loss is not recorded on a tape")
    if loss.tape is not tape:
        raise ValueError("loss belongs to a different tape")

    grads: list[Optional[np.ndarray]] = [None] * len(tape)
    grads[loss.node] = np.ones_like(loss.data)
    leaves: dict[int, np.ndarray] = {}
    for i in range(loss.node, -1, -1):
        node = tape.node(i)
        g = grads[i]
        if node.is_leaf:
            leaves[i] = g if g is not None else np.zeros(node.shape)
            continue
        if g is None:
            continue
        grads[i] = None
        for pid, pg in zip(node.parents, node.backward(g)):
            if pid is None or pg is None:
                continue
            prev = grads[pid]
            grads[pid] = pg if prev is None else prev + pg
    for i in range(loss.node + 1, len(tape)):
        node = tape.node(i)
        if node.is_leaf:
            leaves[i] = np.zeros(node.shape)
    return Gradients(leaves)
