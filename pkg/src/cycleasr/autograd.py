"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation goes through :func:`apply`, which validates shapes, runs the
forward kernel, rejects non-finite results and (unless gradients are disabled)
records the node so :func:`backward` can walk the graph in reverse
topological order.

Besides the elementary ops, three fused kernels are provided because a
per-timestep composition would dominate runtime on a single CPU core:
``gru`` (a masked recurrent layer over a whole padded batch), ``gru_cell``
(one recurrent step) and ``ctc_nll`` (the CTC forward-backward algorithm).
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "AutogradError",
    "ShapeError",
    "Tensor",
    "Graph",
    "apply",
    "backward",
    "build_graph",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "l1_distance",
    "OPS",
]


class AutogradError(RuntimeError):
    """Raised on invalid graph usage or non-finite results."""


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes (thread-local)."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "saved", "attrs", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.saved = None
        self.attrs: dict = {}
        self.name = name

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __getitem__(self, key):
        return apply("slice", self, key=key)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def tanh(self):
        return apply("tanh", self)

    def sigmoid(self):
        return apply("sigmoid", self)

    def relu(self):
        return apply("relu", self)

    def exp(self):
        return apply("exp", self)

    def log(self):
        return apply("log", self)

    def softmax(self, axis=-1):
        return apply("softmax", self, axis=axis)

    def log_softmax(self, axis=-1):
        return apply("log_softmax", self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=tuple(shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", self, axes=tuple(axes) if axes else None)

    @property
    def T(self):
        return self.transpose()

    def backward(self) -> None:
        backward(self)


def _raise_not_scalar(t: Tensor):
    raise AutogradError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _OpDef:
    forward: Callable
    backward: Callable
    check: Callable | None = None


OPS: dict[str, _OpDef] = {}


def _op(tag: str, check: Callable | None = None):
    def deco(cls):
        OPS[tag] = _OpDef(cls.forward, cls.backward, check)
        return cls

    return deco


def _shape_error(tag: str, *shapes) -> ShapeError:
    joined = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{tag}: incompatible shapes {joined}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_broadcast(tag):
    def check(a, b, **_):
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise _shape_error(tag, a.shape, b.shape) from None

    return check


@_op("add", _check_broadcast("add"))
class _Add:
    def forward(a, b):
        return a + b, None

    def backward(g, saved, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_op("sub", _check_broadcast("sub"))
class _Sub:
    def forward(a, b):
        return a - b, None

    def backward(g, saved, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@_op("mul", _check_broadcast("mul"))
class _Mul:
    def forward(a, b):
        return a * b, None

    def backward(g, saved, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@_op("neg")
class _Neg:
    def forward(a):
        return -a, None

    def backward(g, saved, a):
        return (-g,)


def _check_matmul(a, b, **_):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise _shape_error("matmul", a.shape, b.shape) from None


@_op("matmul", _check_matmul)
class _Matmul:
    def forward(a, b):
        return a @ b, None

    def backward(g, saved, a, b):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@_op("tanh")
class _Tanh:
    def forward(a):
        y = np.tanh(a)
        return y, y

    def backward(g, y, a):
        return (g * (1.0 - y * y),)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # exp of -|a| never overflows
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@_op("sigmoid")
class _Sigmoid:
    def forward(a):
        y = _sigmoid(a)
        return y, y

    def backward(g, y, a):
        return (g * y * (1.0 - y),)


@_op("relu")
class _Relu:
    def forward(a):
        return np.maximum(a, 0.0), None

    def backward(g, saved, a):
        return (g * (a > 0),)


@_op("exp")
class _Exp:
    def forward(a):
        y = np.exp(a)
        return y, y

    def backward(g, y, a):
        return (g * y,)


@_op("log")
class _Log:
    def forward(a):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a), None

    def backward(g, saved, a):
        return (g / a,)


@_op("softmax")
class _Softmax:
    def forward(a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        return y, y

    def backward(g, y, a, axis=-1):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@_op("log_softmax")
class _LogSoftmax:
    def forward(a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
        return y, y

    def backward(g, y, a, axis=-1):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


def _check_concat(*arrays, axis=0):
    ref = arrays[0]
    ax = axis % ref.ndim
    for other in arrays[1:]:
        if other.ndim != ref.ndim or any(
            i != ax and p != q for i, (p, q) in enumerate(zip(ref.shape, other.shape))
        ):
            raise _shape_error("concat", ref.shape, other.shape)


@_op("concat", _check_concat)
class _Concat:
    def forward(*arrays, axis=0):
        return np.concatenate(arrays, axis=axis), None

    def backward(g, saved, *arrays, axis=0):
        bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


def _check_slice(a, key=None):
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not (p is Ellipsis or isinstance(p, (slice, int, np.integer))):
            raise ShapeError(f"slice: only basic indexing is supported, got {type(p).__name__}")
    try:
        a[key]
    except IndexError as exc:
        raise ShapeError(f"slice: index {key!r} invalid for shape {a.shape}: {exc}") from None


@_op("slice", _check_slice)
class _Slice:
    def forward(a, key=None):
        return a[key].copy(), None

    def backward(g, saved, a, key=None):
        out = np.zeros_like(a)
        out[key] = g
        return (out,)


def _check_reshape(a, shape=()):
    try:
        np.empty(a.shape).reshape(shape)
    except ValueError:
        raise _shape_error("reshape", a.shape, shape) from None


@_op("reshape", _check_reshape)
class _Reshape:
    def forward(a, shape=()):
        return a.reshape(shape), None

    def backward(g, saved, a, shape=()):
        return (g.reshape(a.shape),)


@_op("transpose")
class _Transpose:
    def forward(a, axes=None):
        return np.transpose(a, axes), None

    def backward(g, saved, a, axes=None):
        inv = None if axes is None else np.argsort(axes)
        return (np.transpose(g, inv),)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


@_op("sum")
class _Sum:
    def forward(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims), None

    def backward(g, saved, a, axis=None, keepdims=False):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)


@_op("mean")
class _Mean:
    def forward(a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims), None

    def backward(g, saved, a, axis=None, keepdims=False):
        n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / n,)


@_op("l1_norm")
class _L1Norm:
    def forward(a):
        return np.abs(a).sum(), None

    def backward(g, saved, a):
        # np.sign(0) == 0: subgradient at ties is zero
        return (g * np.sign(a),)


@_op("squared_norm")
class _SquaredNorm:
    def forward(a):
        return np.sum(a * a), None

    def backward(g, saved, a):
        return (2.0 * g * a,)


def _check_lookup(table, indices=None):
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got shape {table.shape}")
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: index out of range for table shape {table.shape}"
        )


@_op("embedding_lookup", _check_lookup)
class _EmbeddingLookup:
    def forward(table, indices=None):
        return table[np.asarray(indices)], None

    def backward(g, saved, table, indices=None):
        out = np.zeros_like(table)
        np.add.at(out, np.asarray(indices).reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)


# -- fused recurrent kernels ------------------------------------------------

def _check_gru_weights(tag, d, wx, wh, bx, bh):
    h = wh.shape[0]
    if wx.shape != (d, 3 * h) or wh.shape != (h, 3 * h) or bx.shape != (3 * h,) or bh.shape != (3 * h,):
        raise ShapeError(
            f"{tag}: weight shapes wx{wx.shape} wh{wh.shape} bx{bx.shape} bh{bh.shape} "
            f"do not match input width {d}"
        )


def _gru_cell_forward(gx, h, wh, bh):
    """One step given the precomputed input projection ``gx = x @ wx + bx``."""
    H = h.shape[-1]
    gh = h @ wh + bh
    r = _sigmoid(gx[:, :H] + gh[:, :H])
    z = _sigmoid(gx[:, H : 2 * H] + gh[:, H : 2 * H])
    ghn = gh[:, 2 * H :]
    n = np.tanh(gx[:, 2 * H :] + r * ghn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (r, z, n, ghn)


def _gru_cell_backward(dh_new, h, cache):
    """Return (d gx, d gh, d h via the direct path) for one step."""
    r, z, n, ghn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dan = dn * (1.0 - n * n)
    dr = dan * ghn
    dar = dr * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dgx = np.concatenate([dar, daz, dan], axis=1)
    dgh = np.concatenate([dar, daz, dan * r], axis=1)
    return dgx, dgh, dh_new * z


def _check_gru(x, wx, wh, bx, bh, mask=None, reverse=False):
    if x.ndim != 3:
        raise ShapeError(f"gru: input must be (batch, time, dim), got shape {x.shape}")
    _check_gru_weights("gru", x.shape[2], wx, wh, bx, bh)
    if mask is not None and np.shape(mask) != x.shape[:2]:
        raise _shape_error("gru", x.shape, np.shape(mask))


@_op("gru", _check_gru)
class _GRU:
    """Masked GRU layer; padded steps carry the state and emit zeros."""

    def forward(x, wx, wh, bx, bh, mask=None, reverse=False):
        B, T, _ = x.shape
        H = wh.shape[0]
        m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
        gx_all = x @ wx + bx
        out = np.zeros((B, T, H))
        h = np.zeros((B, H))
        caches = [None] * T
        prevs = [None] * T
        order = range(T - 1, -1, -1) if reverse else range(T)
        for t in order:
            mt = m[:, t : t + 1]
            h_new, cache = _gru_cell_forward(gx_all[:, t], h, wh, bh)
            prevs[t] = h
            caches[t] = cache
            h = mt * h_new + (1.0 - mt) * h
            out[:, t] = mt * h
        return out, (m, prevs, caches)

    def backward(g, saved, x, wx, wh, bx, bh, mask=None, reverse=False):
        m, prevs, caches = saved
        B, T, _ = x.shape
        H = wh.shape[0]
        dgx_all = np.zeros((B, T, 3 * H))
        dwh = np.zeros_like(wh)
        dbh = np.zeros_like(bh)
        carry = np.zeros((B, H))
        order = range(T) if reverse else range(T - 1, -1, -1)
        for t in order:
            mt = m[:, t : t + 1]
            ds = carry + mt * g[:, t]
            dcell = mt * ds
            dgx, dgh, dh_direct = _gru_cell_backward(dcell, prevs[t], caches[t])
            dgx_all[:, t] = dgx
            dwh += prevs[t].T @ dgh
            dbh += dgh.sum(axis=0)
            carry = (1.0 - mt) * ds + dh_direct + dgh @ wh.T
        flat = dgx_all.reshape(B * T, 3 * H)
        dx = (flat @ wx.T).reshape(x.shape)
        dwx = x.reshape(B * T, -1).T @ flat
        return dx, dwx, dwh, flat.sum(axis=0), dbh


def _check_gru_cell(x, h, wx, wh, bx, bh):
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0] or h.shape[1] != wh.shape[0]:
        raise _shape_error("gru_cell", x.shape, h.shape)
    _check_gru_weights("gru_cell", x.shape[1], wx, wh, bx, bh)


@_op("gru_cell", _check_gru_cell)
class _GRUCell:
    def forward(x, h, wx, wh, bx, bh):
        h_new, cache = _gru_cell_forward(x @ wx + bx, h, wh, bh)
        return h_new, cache

    def backward(g, cache, x, h, wx, wh, bx, bh):
        dgx, dgh, dh_direct = _gru_cell_backward(g, h, cache)
        return (
            dgx @ wx.T,
            dh_direct + dgh @ wh.T,
            x.T @ dgx,
            h.T @ dgh,
            dgx.sum(axis=0),
            dgh.sum(axis=0),
        )


# -- CTC ----------------------------------------------------------------------

def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to align ``target``: one per label plus a blank between repeats."""
    t = list(target)
    return len(t) + sum(1 for a, b in zip(t, t[1:]) if a == b)


def _ctc_single(lp: np.ndarray, target: np.ndarray, blank: int):
    """Forward-backward for one utterance; returns (log p, d(-log p)/d lp)."""
    U, V = lp.shape
    L = len(target)
    S = 2 * L + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(S, dtype=bool)
    if L > 1:
        skip[3::2] = ext[3::2] != ext[1:-2:2]
    emit = lp[:, ext]  # (U, S)
    neg = -np.inf
    alpha = np.full((U, S), neg)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, U):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]
    beta = np.full((U, S), neg)
    beta[U - 1, S - 1] = emit[U - 1, S - 1]
    if S > 1:
        beta[U - 1, S - 2] = emit[U - 1, S - 2]
    for t in range(U - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        # a skip from s to s+2 is allowed when s+2 is allowed to skip back to s
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]
    logp = alpha[U - 1, S - 1] if S == 1 else np.logaddexp(alpha[U - 1, S - 1], alpha[U - 1, S - 2])
    post = np.exp(alpha + beta - emit - logp)
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= post[:, s]
    return logp, grad


def _check_ctc(log_probs, targets=None, lengths=None, blank=0):
    if log_probs.ndim != 3:
        raise ShapeError(f"ctc_nll: log_probs must be (batch, time, vocab), got {log_probs.shape}")
    if len(targets) != log_probs.shape[0] or len(lengths) != log_probs.shape[0]:
        raise _shape_error("ctc_nll", log_probs.shape, (len(targets), len(lengths)))
    for i, (y, u) in enumerate(zip(targets, lengths)):
        if u < 1:
            raise ShapeError(f"ctc_nll: no frames at batch index {i}")
        if any(int(k) == blank for k in y):
            raise ShapeError(f"ctc_nll: target at batch index {i} contains the blank symbol")
        if ctc_min_frames(y) > u or u > log_probs.shape[1]:
            raise ShapeError(
                f"ctc_nll: target unalignable at batch index {i}: "
                f"needs {ctc_min_frames(y)} frames, has {u}"
            )


@_op("ctc_nll", _check_ctc)
class _CTC:
    """Per-utterance negative CTC log-likelihood from frame log-probabilities."""

    def forward(log_probs, targets=None, lengths=None, blank=0):
        out = np.zeros(log_probs.shape[0])
        grads = np.zeros_like(log_probs)
        for i, (y, u) in enumerate(zip(targets, lengths)):
            logp, g = _ctc_single(log_probs[i, :u], np.asarray(y, dtype=np.int64), blank)
            out[i] = -logp
            grads[i, :u] = g
        return out, grads

    def backward(g, grads, log_probs, targets=None, lengths=None, blank=0):
        return (grads * g[:, None, None],)


# ---------------------------------------------------------------------------
# graph construction and reverse pass
# ---------------------------------------------------------------------------

def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(op_tag: str, *inputs, **attrs) -> Tensor:
    """Run ``op_tag`` on ``inputs`` and record the node when gradients are on."""
    try:
        opdef = OPS[op_tag]
    except KeyError:
        raise AutogradError(f"unknown op {op_tag!r}") from None
    tensors = [_as_tensor(x) for x in inputs]
    arrays = [t.data for t in tensors]
    if opdef.check is not None:
        opdef.check(*arrays, **attrs)
    data, saved = opdef.forward(*arrays, **attrs)
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise AutogradError(f"{op_tag}: non-finite output")
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.op = op_tag
        out.parents = tuple(tensors)
        out.saved = saved
        out.attrs = attrs
    return out


Graph = list  # topologically ordered nodes; inputs precede consumers


def build_graph(root: Tensor) -> Graph:
    """Nodes reachable from ``root`` that carry gradient, in topological order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires-grad leaf."""
    if loss.size != 1:
        raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise AutogradError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(build_graph(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        opdef = OPS[node.op]
        parent_grads = opdef.backward(g, node.saved, *(p.data for p in node.parents), **node.attrs)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)


# ---------------------------------------------------------------------------
# convenience wrappers
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    return apply("embedding_lookup", table, indices=np.asarray(indices, dtype=np.int64))


def l1_norm(a) -> Tensor:
    return apply("l1_norm", a)


def squared_norm(a) -> Tensor:
    return apply("squared_norm", a)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Sum of absolute differences; subgradient zero where a == b."""
    if a.shape != b.shape:
        raise _shape_error("l1_distance", a.shape, b.shape)
    return apply("l1_norm", apply("sub", a, b))


def gru(x: Tensor, wx, wh, bx, bh, mask=None, reverse: bool = False) -> Tensor:
    return apply("gru", x, wx, wh, bx, bh, mask=mask, reverse=reverse)


def gru_cell(x: Tensor, h: Tensor, wx, wh, bx, bh) -> Tensor:
    return apply("gru_cell", x, h, wx, wh, bx, bh)


def ctc_nll(log_probs: Tensor, targets, lengths, blank: int) -> Tensor:
    return apply(
        "ctc_nll",
        log_probs,
        targets=[np.asarray(y, dtype=np.int64) for y in targets],
        lengths=[int(u) for u in lengths],
        blank=blank,
    )
