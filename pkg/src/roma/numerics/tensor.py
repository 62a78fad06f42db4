"""Tensor, recording tape and parameter registry.

Computation is define-by-run: every primitive in :mod:`roma.numerics.ops`
checks whether a :class:`Tape` is active and, if any input requires a
gradient, appends a node holding the inputs, the output and a closure that
maps the output gradient to input gradients.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from roma.errors import ContractError, NumericError, ShapeError

DTYPE = np.float64


class _AllocationTracker:
    """High-water mark of live tensor bytes while enabled."""

    def __init__(self) -> None:
        self.enabled = False
        self.live = 0
        self.peak = 0

    def reset(self, baseline: int = 0) -> None:
        self.live = int(baseline)
        self.peak = int(baseline)

    def _alloc(self, nbytes: int) -> None:
        self.live += nbytes
        if self.live > self.peak:
            self.peak = self.live

    def _free(self, nbytes: int) -> None:
        self.live -= nbytes


allocations = _AllocationTracker()


class Tensor:
    """A float64 array with an optional gradient buffer.

    ``data`` is treated as immutable once the tensor exists; only ``grad`` is
    accumulated in place.  Parameters are updated by rebinding ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.base is not None or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        if allocations.enabled:
            nbytes = arr.nbytes
            allocations._alloc(nbytes)
            weakref.finalize(self, allocations._free, nbytes)

    @property
    def shape(self) -> tuple:
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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def validate(self) -> None:
        """Raise :class:`NumericError` if the tensor holds NaN or Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"tensor {self.name or ''} contains non-finite values")
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives live in ops to keep backward rules together
    def __add__(self, other):
        from roma.numerics import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from roma.numerics import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from roma.numerics import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from roma.numerics import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from roma.numerics import ops
        return ops.matmul(self, other)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str = ""
    # (function, args, kwargs) of the originating primitive call, for replay
    call: Optional[tuple] = None


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives executed inside the block record
    themselves here.  Nodes are appended in execution order, which is a
    valid topological order.
    """

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def active(cls) -> Optional["Tape"]:
        return cls._stack[-1] if cls._stack else None

    def record(self, node: Node) -> None:
        self.nodes.append(node)


class no_tape:
    """Suspend recording (used by finite differences and inference)."""

    def __enter__(self):
        self._saved = Tape._stack[:]
        Tape._stack.clear()
        return self

    def __exit__(self, *exc):
        Tape._stack[:] = self._saved


def backward(root: Tensor, tape: Tape, params: Optional["ParamRegistry"] = None) -> dict:
    """Reverse-mode sweep over ``tape`` seeded with d(root)/d(root) = 1.

    Gradients are accumulated into ``.grad`` of every reachable tensor that
    requires a gradient.  Registered parameters that the root does not reach
    receive an explicit zero gradient.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if gi.shape != t.data.shape:
                raise ShapeError(f"{node.op}: backward produced {gi.shape} for input {t.data.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                leaves[key] = t
    out = {}
    for key, g in grads.items():
        t = leaves.get(key, root if key == id(root) else None)
        if t is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
        out[key] = t
    if params is not None:
        for _, p in params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return out


@dataclass
class ParamRegistry:
    """Named trainable tensors; iteration is lexicographic by name."""

    _params: dict = field(default_factory=dict)

    def add(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=requires_grad, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_elements(self) -> int:
        return sum(p.size for p in self._params.values())

    def nbytes(self) -> int:
        return sum(p.data.nbytes for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ShapeError(f"parameter sets differ: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in state.items():
            p = self._params[name]
            if tuple(arr.shape) != p.shape:
                raise ShapeError(f"parameter {name!r}: expected shape {p.shape}, got {tuple(arr.shape)}")
        for name, arr in state.items():
            self._params[name].data = np.array(arr, dtype=DTYPE, copy=True)
