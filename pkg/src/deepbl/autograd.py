"""Dense tensors with tape-based reverse-mode differentiation.

Every operation whose inputs require gradients appends a node to the active
:class:`Tape`.  :func:`backward` replays the tape in reverse creation order,
which is a valid topological order, and clears it afterwards.

Broadcasting is deliberately narrow: equal shapes, a scalar against anything,
or a row/column vector against a matrix.  Anything else is a shape error.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
INVERSE_COND_LIMIT = 1e12


class ShapeError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_state = threading.local()


def _tapes() -> list[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = [Tape()]
        _state.grad_enabled = True
    return _state.stack


def current_tape() -> Tape:
    return _tapes()[-1]


def is_grad_enabled() -> bool:
    _tapes()
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    _tapes()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def use_tape(tape: Tape | None = None):
    """Make ``tape`` (or a fresh one) the recording target inside the block."""
    tape = tape if tape is not None else Tape()
    stack = _tapes()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def make_node(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    """Wrap ``data`` as the output of an operation, recording it if needed.

    ``backward`` maps the output gradient to a sequence with one entry per
    parent (``None`` where no gradient flows).
    """
    parents = tuple(parents)
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        current_tape().record(out)
    return out


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    if a.ndim == 2 and b.ndim == 2:
        ok = all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape))
        if ok and (1 in a.shape or 1 in b.shape):
            return
    if (a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]) or (
        b.ndim == 2 and a.ndim == 1 and a.shape[0] == b.shape[1]
    ):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), backward, "mul")


def power(x, k: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_node(xd**k, (x,), lambda g: (g * k * xd ** (k - 1),), f"power({k})")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_node(y, (x,), lambda g: (g * y,), "exp")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # stable in both tails
    z = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return make_node(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        ]

    return make_node(data, tensors, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) for i in parts)

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(x.data[index], dtype=DTYPE), (x,), backward, "slice")


def diag_extract(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diag_extract: expected a square matrix, got shape {x.shape}")
    return make_node(np.diag(x.data).copy(), (x,), lambda g: (np.diag(g),), "diag_extract")


def diag_embed(v) -> Tensor:
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeError(f"diag_embed: expected a vector, got shape {v.shape}")
    return make_node(np.diag(v.data), (v,), lambda g: (np.diag(g).copy(),), "diag_embed")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def matrix_inverse(x) -> Tensor:
    """Inverse via LU with partial pivoting; refuses ill-conditioned input.

    The condition number is estimated in the 1-norm as ``|A|_1 |A^-1|_1``.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"matrix_inverse: expected a square matrix, got shape {x.shape}")
    try:
        y = np.linalg.inv(x.data)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix_inverse: singular {x.shape} matrix") from exc
    cond = np.linalg.norm(x.data, 1) * np.linalg.norm(y, 1)
    if not np.isfinite(cond) or cond > INVERSE_COND_LIMIT:
        raise SingularMatrixError(
            f"matrix_inverse: condition estimate {cond:.3e} exceeds {INVERSE_COND_LIMIT:.0e}"
        )
    return make_node(y, (x,), lambda g: (-y.T @ g @ y.T,), "matrix_inverse")


# ---------------------------------------------------------------------------
# normalisation and sequence ops


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), backward, "softmax")


def conv1d(x, weight, bias=None) -> Tensor:
    """Causal 1-D convolution over the leading (time) axis.

    ``x`` has shape (L, M, C_in) with M independent series sharing the kernel;
    ``weight`` has shape (width, C_in, C_out) and tap ``k`` multiplies the
    input ``k`` steps in the past.  Missing history is zero, so the output
    keeps length L and never sees the future.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    length = x.shape[0]
    width = weight.shape[0]
    xd, wd = x.data, weight.data
    out = np.zeros((length, x.shape[1], wd.shape[2]), dtype=DTYPE)
    for k in range(min(width, length)):
        out[k:] += xd[: length - k] @ wd[k]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wd.shape[2],):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {wd.shape[2]}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for k in range(min(width, length)):
            gx[: length - k] += g[k:] @ wd[k].T
            gw[k] = np.tensordot(xd[: length - k], g[k:], axes=([0, 1], [0, 1]))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads

    return make_node(out, parents, backward, "conv1d")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# ---------------------------------------------------------------------------
# differentiation


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    tape.clear()


def grad_check(fn: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative disagreement between tape and central-difference gradients."""
    base = np.array(as_tensor(point).data, dtype=DTYPE)
    x = Tensor(base.copy(), requires_grad=True)
    with use_tape() as tape:
        loss = fn(x)
        backward(loss, tape)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.size):
            shifted = base.copy().reshape(-1)
            shifted[i] += step
            up = float(fn(Tensor(shifted.reshape(base.shape))).data)
            shifted[i] -= 2 * step
            down = float(fn(Tensor(shifted.reshape(base.shape))).data)
            flat[i] = (up - down) / (2 * step)

    err = np.abs(numeric - analytic) / (np.abs(numeric) + np.abs(analytic) + 1e-8)
    return float(err.max()) if err.size else 0.0
