"""Dense float64 tensors with a reverse-mode tape.

Operations are recorded on the tape that is active in the current thread
(see :class:`Tape`) whenever at least one operand requires a gradient.
Without an active tape the same functions just compute values, which is how
inference runs.

>>> w = Tensor([3.0], requires_grad=True)
>>> with Tape() as tape:
...     y = total(mul(w, w))
>>> backward(tape, y, [w])[0]
array([6.])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import AllMasked, IndexOutOfRange, NonFinite, NotScalarLoss, ShapeMismatch

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records operations in creation order.

    Use as a context manager; tapes nest, the innermost one records. A tape
    belongs to the thread that opened it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._saved = None

    def __enter__(self):
        self._saved = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._saved
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    return getattr(_local, "tape", None)


def _emit(op, value, inputs, backward):
    if not np.all(np.isfinite(value)):
        raise NonFinite(f"{op} produced a non-finite value")
    out = Tensor(value)
    tape = getattr(_local, "tape", None)
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                tape.nodes.append(_Node(out, inputs, backward))
                break
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float):
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise ShapeMismatch("matmul", ad.shape, bd.shape)

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _emit("matmul", ad @ bd, (a, b), backward)


def total(a):
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape
    return _emit("sum", np.asarray(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    if a.shape != b.shape:
        raise ShapeMismatch("minimum", a.shape, b.shape)
    take_a = a.data <= b.data
    return _emit("minimum", np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)))


# ------------------------------------------------------------- nonlinearities


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    y = _sigmoid(a.data)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a, floor: float = 0.0):
    """Natural log of ``max(a, floor)``; floored entries get zero gradient."""
    x = a.data
    live = x > floor
    safe = np.where(live, x, 1.0)
    y = np.where(live, np.log(safe), np.log(floor) if floor > 0 else -np.inf)
    return _emit("log", y, (a,), lambda g: (np.where(live, g / safe, 0.0),))


def softmax(a, mask=None):
    """Softmax over the last axis.

    ``mask`` (boolean, same shape) selects the live entries; masked entries
    get weight exactly 0 and take no part in the normalisation.
    """
    x = a.data
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeMismatch("softmax", x.shape, mask.shape)
        if not mask.any(axis=-1).all():
            raise AllMasked("softmax: every position is masked")
        z = np.where(mask, x, -np.inf)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", y, (a,),
                 lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


# ---------------------------------------------------------------- structural


def concat(tensors: Sequence[Tensor], axis: int = 0):
    parts = [t.data for t in tensors]
    try:
        value = np.concatenate(parts, axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *(p.shape for p in parts)) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", value, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor]):
    parts = [t.data for t in tensors]
    try:
        value = np.stack(parts)
    except ValueError:
        raise ShapeMismatch("stack", *(p.shape for p in parts)) from None
    return _emit("stack", value, tuple(tensors), lambda g: tuple(g))


def getitem(a, key):
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _emit("getitem", a.data[key], (a,), backward)


def max_rows(a):
    """Column-wise maximum over the rows of a matrix.

    Ties go to the lowest row index, so the backward pass is deterministic.
    """
    x = a.data
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch("max_rows", x.shape)
    arg = x.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        out = np.zeros_like(x)
        out[arg, cols] = g
        return (out,)

    return _emit("max_rows", x[arg, cols], (a,), backward)


def embed(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexOutOfRange(f"embed: id out of range [0, {n})")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return _emit("embed", table.data[ids], (table,), backward)


def scatter_add(values, ids, size: int):
    """Vector of length ``size`` with ``values[k]`` added at ``ids[k]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if values.data.ndim != 1 or ids.shape != values.shape:
        raise ShapeMismatch("scatter_add", values.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= size):
        raise IndexOutOfRange(f"scatter_add: id out of range [0, {size})")
    out = np.zeros(size)
    np.add.at(out, ids, values.data)
    return _emit("scatter_add", out, (values,), lambda g: (g[ids],))


def pad(a, size: int):
    """Right-pad a vector with zeros to length ``size``."""
    n = a.shape[0]
    if a.data.ndim != 1 or size < n:
        raise ShapeMismatch("pad", a.shape, (size,))
    out = np.zeros(size)
    out[:n] = a.data
    return _emit("pad", out, (a,), lambda g: (g[:n],))


# ----------------------------------------------------------------- fused LSTM


def lstm_cell(x, state, weight, bias):
    """One LSTM step.

    ``state`` is the concatenation ``[h, c]`` of hidden and memory vectors
    (length ``2H``), ``weight`` has shape ``(len(x) + H, 4H)`` with gate
    blocks ordered input, forget, output, candidate. Returns the new
    ``[h, c]``.
    """
    xd, sd, W, b = x.data, state.data, weight.data, bias.data
    H = sd.shape[0] // 2
    if xd.ndim != 1 or W.shape != (xd.shape[0] + H, 4 * H) or b.shape != (4 * H,):
        raise ShapeMismatch("lstm_cell", xd.shape, sd.shape, W.shape, b.shape)
    h, c = sd[:H], sd[H:]
    inp = np.concatenate([xd, h])
    z = inp @ W + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    o = _sigmoid(z[2 * H:3 * H])
    u = np.tanh(z[3 * H:])
    c_new = f * c + i * u
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(g):
        gh, gc = g[:H], g[H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * u * i * (1.0 - i),
            dc * c * f * (1.0 - f),
            gh * tc * o * (1.0 - o),
            dc * i * (1.0 - u * u),
        ])
        dinp = W @ dz
        dstate = np.concatenate([dinp[xd.shape[0]:], dc * f])
        return dinp[:xd.shape[0]], dstate, np.outer(inp, dz), dz

    return _emit("lstm_cell", np.concatenate([h_new, c_new]), (x, state, weight, bias), backward)


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "max-pool-rows": max_rows,
    "embed-lookup": embed,
    "scatter-add": scatter_add,
    "sum": total,
    "minimum": minimum,
    "log": log,
    "stack": lambda *ts: stack(ts),
    "getitem": getitem,
    "pad": pad,
    "lstm-cell": lstm_cell,
}


def primitive(kind: str, *operands, **kwargs):
    """Dispatch an operation by name, e.g. ``primitive("sigmoid", x)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*operands, **kwargs)


# ------------------------------------------------------------------ backward


def backward(tape: Tape, loss: Tensor, wrt):
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    ``wrt`` is either a sequence of tensors (a list of arrays is returned) or
    a mapping of names to tensors (a dict of arrays is returned). Leaves the
    loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    def lookup(t):
        g = grads.get(id(t))
        return np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)

    if isinstance(wrt, Mapping):
        return {name: lookup(t) for name, t in wrt.items()}
    return [lookup(t) for t in wrt]


# ---------------------------------------------------------------- grad check


class GradCheckReport:
    def __init__(self, max_rel_error, worst_param, worst_index, n_coords, per_param):
        self.max_rel_error = max_rel_error
        self.worst_param = worst_param
        self.worst_index = worst_index
        self.n_coords = n_coords
        self.per_param = per_param

    def __repr__(self):
        return (f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
                f"worst={self.worst_param}{list(self.worst_index)}, coords={self.n_coords})")


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5,
               names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central finite differences.

    ``f`` takes no arguments and reads the current values of ``params``; it
    is evaluated once under a tape and twice per coordinate without one.
    Relative error is ``|a - b| / max(1, |a|, |b|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape() as tape:
        loss = f()
    analytic = backward(tape, loss, params)
    del tape

    def value():
        v = float(f().data)
        if not np.isfinite(v):
            raise NonFinite("grad_check: objective is not finite")
        return v

    worst = (0.0, None, ())
    per_param = {}
    n = 0
    for name in (names if names is not None else params):
        t = params[name]
        flat = t.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        worst_here = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = value()
            flat[k] = orig - eps
            down = value()
            flat[k] = orig
            num = (up - down) / (2 * eps)
            err = abs(ga[k] - num) / max(1.0, abs(ga[k]), abs(num))
            n += 1
            if err > worst_here:
                worst_here = err
            if err > worst[0]:
                worst = (err, name, np.unravel_index(k, t.shape))
        per_param[name] = worst_here
    return GradCheckReport(worst[0], worst[1], worst[2], n, per_param)
