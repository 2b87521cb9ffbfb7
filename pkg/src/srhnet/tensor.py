"""Dense tensor with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array.  Operations executed while a
:class:`Tape` is active, and whose inputs require gradients, append a node to
that tape; :func:`backward` replays the tape in reverse.  Outside a tape no
graph is kept, so intermediate buffers are freed as soon as they go out of
scope (this is what streaming inference relies on).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import memory

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32
_tapes: list["Tape"] = []

# Debug checks: finiteness of every op output.  Off by default (cost).
DEBUG = False


def get_dtype():
    return _default_dtype


def set_precision(mode: str) -> None:
    """Set the default real type: ``"f32"`` (training) or ``"f64"`` (verification)."""
    global _default_dtype
    try:
        _default_dtype = _DTYPES[mode]
    except KeyError:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_DTYPES)}") from None


@contextlib.contextmanager
def precision(mode: str):
    global _default_dtype
    saved = _default_dtype
    set_precision(mode)
    try:
        yield
    finally:
        _default_dtype = saved


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    global DEBUG
    saved = DEBUG
    DEBUG = enabled
    try:
        yield
    finally:
        DEBUG = saved


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            is_float_array = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if is_float_array else _default_dtype
        self.data = np.require(np.asarray(data, dtype=dtype), requirements="C")  # keeps 0-d shapes
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        if memory._active:
            memory._notify(self, self.data.nbytes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # arithmetic sugar; implementations live in ops
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
        return ops.scale(self, -1.0)


def _raise_not_scalar(t: Tensor):
    raise ValueError(f"tensor of shape {t.shape} is not a scalar")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _default_dtype))


class Node:
    """One recorded operation: output, inputs and the vector-Jacobian rule."""

    __slots__ = ("out", "inputs", "vjp", "tape")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable, tape: "Tape"):
        self.out = out
        self.inputs = tuple(inputs)
        self.vjp = vjp
        self.tape = tape


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is a topological order of
    the graph by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss)

    def clear(self) -> None:
        for node in self.nodes:
            node.out._node = None
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _tapes[-1] if _tapes else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording (inference)."""
    saved = list(_tapes)
    _tapes.clear()
    try:
        yield
    finally:
        _tapes.extend(saved)


def record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Attach ``vjp`` to ``out`` if a tape is active and any input needs gradients.

    ``vjp(g)`` receives the output cotangent and returns one cotangent (or
    ``None``) per input.
    """
    if DEBUG and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced ({out!r})")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(out, inputs, vjp, tape)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf tensor reachable from scalar ``loss``.

    Leaf gradients accumulate (call ``zero_grad`` between steps).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise ValueError("loss was not produced under an active tape")
    tape = loss._node.tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    stop = tape.nodes.index(loss._node)
    for node in reversed(tape.nodes[: stop + 1]):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise AssertionError(f"gradient shape {gi.shape} != input shape {inp.shape}")
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                pending[key] = gi if key not in pending else pending[key] + gi
