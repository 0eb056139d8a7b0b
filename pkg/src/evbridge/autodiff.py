"""Minimal define-by-run reverse-mode automatic differentiation.

Operations executed while a :class:`Tape` is active, and that touch at
least one tensor with ``requires_grad``, are appended to that tape.
``Tape.backward`` then walks the record once, in reverse, accumulating
gradients.  Everything is float64.

    store = ParamStore()
    w = store.add("w", rng.normal(size=(3, 3)))
    with Tape() as tape:
        loss = mean(matmul(x, w) * 2.0)
    tape.backward(loss)
    adam_step(store)
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, UsageError

_TAPES: list["Tape"] = []
_PAUSED = [0]
# while grad_check runs: ("record" | "replay", list of detached arrays, cursor)
_DETACH_LOG: list = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "derived", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.derived = False  # produced by a recorded operation

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.visits = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, root: Tensor, store: "ParamStore | None" = None) -> dict[int, np.ndarray]:
        """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

        Returns the gradient map keyed by ``id(tensor)``.  When ``store`` is
        given, parameters the root does not depend on receive a zero
        gradient instead of ``None``.
        """
        if root.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
        produced = any(n.output is root for n in self.nodes)
        if not produced and (root.derived or not root.requires_grad):
            raise UsageError("root was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        reached: dict[int, Tensor] = {id(root): root}
        self.visits = 0
        for node in reversed(self.nodes):
            self.visits += 1
            g = grads.get(id(node.output))
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
                    reached[k] = t
        for k, t in reached.items():
            t.grad = grads[k] if t.grad is None else t.grad + grads[k]
        if store is not None:
            for p in store.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
        return grads


@contextlib.contextmanager
def no_grad():
    """Suspend recording on every active tape."""
    _PAUSED[0] += 1
    try:
        yield
    finally:
        _PAUSED[0] -= 1


def _record(data, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    tape = _TAPES[-1] if (_TAPES and not _PAUSED[0]) else None
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.derived = True
        tape.nodes.append(Node(op, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    k = np.where(a.data > 0, 1.0, slope)
    return _record(a.data * k, (a,), lambda g: (g * k,), "leaky_relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def max_with_scalar(a, c: float) -> Tensor:
    """Elementwise max(a, c)."""
    a = as_tensor(a)
    mask = a.data > c
    return _record(np.where(mask, a.data, c), (a,), lambda g: (g * mask,), "max_with_scalar")


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a >= 0; the derivative is taken as 0 where a == 0."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise UsageError("power expects a nonnegative base")
    y = a.data ** p
    pos = a.data > 0

    def back(g):
        d = np.zeros_like(a.data)
        d[pos] = p * a.data[pos] ** (p - 1.0)
        return (g * d,)

    return _record(y, (a,), back, "power")


def detach(a) -> Tensor:
    """Copy of ``a`` cut from the graph; recorded so the cut is visible on the tape."""
    a = as_tensor(a)
    tape = _TAPES[-1] if (_TAPES and not _PAUSED[0]) else None
    data = a.data.copy()
    if _DETACH_LOG:
        mode, saved, cursor = _DETACH_LOG[-1]
        if mode == "record":
            saved.append(data)
        else:
            data = saved[cursor[0]]
            cursor[0] += 1
    out = Tensor(data, requires_grad=False)
    if tape is not None and a.requires_grad:
        tape.nodes.append(Node("detach", (a,), out, lambda g: (None,)))
    return out


# ---------------------------------------------------------------- reductions / shape

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(y, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0:
        raise UsageError("mean of an empty tensor")
    y = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _record(y, (a,), back, "mean")


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Reduction max; the gradient is shared equally among tied maxima."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    hit = (a.data == m).astype(np.float64)
    hit /= hit.sum(axis=axes, keepdims=True)
    y = m if keepdims else np.squeeze(m, axis=axes)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * hit,)

    return _record(y, (a,), back, "max")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from None
    return _record(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from None
    return _record(y, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    y = a.data[idx]

    def back(g):
        d = np.zeros_like(a.data)
        d[idx] += g
        return (d,)

    return _record(np.array(y), (a,), back, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return _record(y, ts, back, "concat")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """2-D cross-correlation with zero 'same' padding.

    ``x``: [B, C_in, H, W]; ``w``: [C_out, C_in, k, k] with odd k;
    ``b``: [C_out] or None.  Output: [B, C_out, ceil(H/s), ceil(W/s)].
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape}, {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, kcin, k, k2 = w.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    pad = k // 2
    s = int(stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    ho, wo = win.shape[2], win.shape[3]
    # patch matrix [B*Ho*Wo, Cin*k*k], built in one copy
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, cin * k * k)
    wmat = w.data.reshape(cout, cin * k * k)
    y = cols @ wmat.T
    inputs: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {b.shape} != ({cout},)")
        y += b.data
        inputs = (x, w, b)
    y = np.ascontiguousarray(y.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))

    def back(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        dw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(bsz, ho, wo, cin, k, k)
            dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin))
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[..., i, j]
            dx = dxp[:, pad:pad + h, pad:pad + wd, :].transpose(0, 3, 1, 2)
        if b is None:
            return dx, dw
        return dx, dw, gmat.sum(axis=0)

    return _record(y, inputs, back, "conv2d")


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    bsz, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    y = x.data.reshape(bsz, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _record(y, (x,), back, "avg_pool2d")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects 4-D input, got {x.shape}")
    f = factor
    y = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def back(g):
        bsz, c, h, w = g.shape
        return (g.reshape(bsz, c, h // f, f, w // f, f).sum(axis=(3, 5)),)

    return _record(y, (x,), back, "upsample_nearest")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise DimensionError(f"logits {logits.shape} do not match {labels.size} labels")
    k = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise UsageError(f"labels must lie in [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(se[:, 0])
    rows = np.arange(labels.size)
    loss = np.mean(lse - z[rows, labels])
    probs = e / se

    def back(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / labels.size),)

    return _record(np.array(loss), (logits,), back, "softmax_cross_entropy")


# ---------------------------------------------------------------- parameters and optimizer

class ParamStore:
    """Named trainable tensors plus per-parameter Adam moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def values(self):
        return self._params.values()

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._params) - set(arrays)
        if strict and (missing or set(arrays) - set(self._params)):
            raise UsageError(f"checkpoint/parameter mismatch: missing={sorted(missing)} "
                             f"extra={sorted(set(arrays) - set(self._params))}")
        for k, a in arrays.items():
            if k not in self._params:
                continue
            p = self._params[k]
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {a.shape} != {p.shape}")
            p.data[...] = a


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, names: Sequence[str] | None = None) -> ParamStore:
    """In-place bias-corrected Adam update of ``names`` (default: all)."""
    names = store.names() if names is None else list(names)
    missing = [n for n in names if store[n].grad is None]
    if missing:
        raise UsageError(f"no gradient for parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    for n in names:
        p = store[n]
        st = store.state.get(n)
        if st is None:
            st = store.state[n] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        g = p.grad
        st["t"] += 1
        st["m"] = beta1 * st["m"] + (1.0 - beta1) * g
        st["v"] = beta2 * st["v"] + (1.0 - beta2) * g * g
        mhat = st["m"] / (1.0 - beta1 ** st["t"])
        vhat = st["v"] / (1.0 - beta2 ** st["t"])
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return store


def grad_check(f: Callable[[], Tensor], params, step: float = 1e-5, max_coords: int | None = None,
               seed: int = 0, retry_steps=(), retry_above: float = 1e-3) -> float:
    """Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over coordinates.

    ``f`` rebuilds the scalar from the current contents of ``params`` (a
    ParamStore, a dict of tensors or a list of tensors).  Numeric
    derivatives use central differences, with every :func:`detach` output
    held at its value from the unperturbed evaluation.  ``max_coords`` limits the check
    to a seeded random subset of coordinates per tensor.

    A coordinate whose error exceeds ``retry_above`` is probed again with
    each of ``retry_steps`` and keeps its smallest error.  A kink inside
    the stencil shrinks away with the step; a wrong analytic derivative
    does not, so it still fails.
    """
    if isinstance(params, ParamStore):
        items = list(params.items())
    elif isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(str(i), t) for i, t in enumerate(params)]
    for _, t in items:
        t.grad = None
    saved: list = []
    _DETACH_LOG.append(("record", saved, [0]))
    try:
        with Tape() as tape:
            root = f()
    finally:
        _DETACH_LOG.pop()
    tape.backward(root)

    def evaluate() -> float:
        # detached values stay at their base-point contents, as the analytic gradient assumes
        _DETACH_LOG.append(("replay", saved, [0]))
        try:
            return f().item()
        finally:
            _DETACH_LOG.pop()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, t in items:
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1).copy()
        flat = t.data.reshape(-1)
        if not np.shares_memory(flat, t.data):
            raise UsageError("grad_check needs contiguous parameter arrays")
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in idx:
            a = analytic[i]
            err = math.inf
            for h in (step,) + tuple(retry_steps):
                orig = flat[i]
                flat[i] = orig + h
                fp = evaluate()
                flat[i] = orig - h
                fm = evaluate()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                err = min(err, abs(a - num) / max(1.0, abs(a), abs(num)))
                if err <= retry_above:
                    break
            worst = max(worst, err)
    return worst
