"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (if any) and
:meth:`Tape.backward` replays the recorded nodes in reverse insertion order.
Outside a tape, operations run as plain numpy forward computations, which is
what inference uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
# exp argument bound; exp(700) is still finite in float64
_EXP_CLAMP = 700.0


class DimensionError(ValueError):
    pass


class TapeStateError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    # make numpy defer to our reflected operators (ndarray * Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded. A tape can be back-propagated exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        if self._consumed:
            raise TapeStateError("cannot record on a tape that has already been back-propagated")
        self.nodes.append(_Node(tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
        if self._consumed:
            raise TapeStateError("backward already ran on this tape; run a new forward pass")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(node.output) for node in self.nodes}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.backward(g_out)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if id(t) in produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = g if prev is None else prev + g
                else:
                    t.grad = g.copy() if t.grad is None else t.grad + g
        if id(loss) not in produced and loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        self.nodes = []


def no_grad_mode() -> bool:
    return _active_tape() is None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an operation on ``inputs``.

    ``backward`` maps the output gradient to a tuple with one gradient (or
    ``None``) per input. The node is recorded only when a tape is active and
    some input requires a gradient.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = _active_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands (1-D operands are treated as vectors)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return make_node(ad @ bd, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ----------------------------------------------------------------------------
# nonlinearities


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function evaluated without overflow for any finite input."""
    x = np.clip(x, -_EXP_CLAMP, _EXP_CLAMP)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = stable_sigmoid(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return make_node(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(np.clip(x.data, -_EXP_CLAMP, _EXP_CLAMP))
    return make_node(e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_node(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is passed only where the input was inside the range."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_node(p, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward)


def logsumexp(x, axis: int | None = None) -> Tensor:
    """log(sum(exp(x))) along ``axis`` with max subtraction; ``axis=None`` reduces everything."""
    x = as_tensor(x)
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(xd - m).sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    out = out_keep.reshape(()) if axis is None else np.squeeze(out_keep, axis=axis)

    def backward(g):
        gk = np.reshape(g, out_keep.shape)
        return (gk * np.exp(xd - out_keep),)

    return make_node(out, (x,), backward)


# ----------------------------------------------------------------------------
# reductions and structure


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return make_node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % x.data.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return make_node(x.data.sum(axis=ax), (x,), backward)


def mean(x) -> Tensor:
    x = as_tensor(x)
    return scale(sum(x), 1.0 / x.size)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient back."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    ndim = ts[0].data.ndim
    ax = axis % max(ndim, 1)
    for t in ts[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != ts[0].shape[d] for d in range(ndim) if d != ax
        ):
            raise DimensionError(
                f"concat along axis {ax}: incompatible shapes {ts[0].shape} and {t.shape}"
            )
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return make_node(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_node(np.stack([t.data for t in ts], axis=axis), ts, backward)


def take(x, index) -> Tensor:
    """Basic or advanced numpy indexing; gradients are scattered back with ``np.add.at``."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return make_node(np.array(x.data[index], dtype=DTYPE), (x,), backward)


def gather_rows(table, indices) -> Tensor:
    """Row gather ``table[indices]``; backward touches only the gathered rows."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"row index out of range for table with {n_rows} rows")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return make_node(table.data[idx], (table,), backward)


# ----------------------------------------------------------------------------
# stochastic / special


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time; eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def grad_reverse(x, lam: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam`` on the way back."""
    x = as_tensor(x)
    factor = -float(lam)
    return make_node(x.data, (x,), lambda g: (g * factor,))


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def finite_diff_check(
    f: Callable[[], Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``f`` takes no arguments and reads the current values of ``x`` (a tensor or a
    list of tensors). Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]

    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]), abs(num))
            worst = max(worst, err)
    for t, flag in zip(xs, flags):
        t.requires_grad = flag
        t.grad = None
    return worst
