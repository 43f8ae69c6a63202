"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every op records its parents and a backward closure on the output tensor.
Tensors carry a monotonically increasing creation id, so the recorded graph
is topologically ordered by construction: :func:`backward` walks the nodes
reachable from the root in exact reverse creation order and accumulates
(sums) gradients into each node.

Feature maps are channels-last (``N x H x W x C`` or ``H x W x C``); token
matrices are ``... x k x d``. float32 is the working precision; pass float64
arrays (or call ``Module.to(np.float64)``) for oracle and gradient checks.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_grad_enabled = True
_counters: list["MultiplyCounter"] = []


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's precondition is violated."""


class MultiplyCounter:
    """Tally of scalar multiplies/divides executed while the counter is active."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@contextlib.contextmanager
def count_multiplies() -> Iterator[MultiplyCounter]:
    """Count the multiplications performed by forward ops inside the block.

    Elementwise mul/div count one per output element, matmul and conv count
    one per multiply-accumulate. exp/log/max and additions are free.
    """
    counter = MultiplyCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _count(n: int) -> None:
    for c in _counters:
        c.add(n)


_branch_logs: list[list[bytes]] = []


def _log_branch(mask: np.ndarray) -> None:
    # piecewise ops record which branch each element took (see grad_check)
    if _branch_logs:
        packed = np.packbits(np.asarray(mask, dtype=bool)).tobytes()
        for log in _branch_logs:
            log.append(packed)


@contextlib.contextmanager
def record_branches() -> Iterator[list[bytes]]:
    """Collect the branch pattern of every relu/abs/clip/max/min evaluated in the block."""
    log: list[bytes] = []
    _branch_logs.append(log)
    try:
        yield log
    finally:
        _branch_logs.remove(log)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference, benchmarking, numeric probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float array that can take part in a recorded graph.

    Args:
        data: array-like contents. float32/float64 numpy arrays keep their
            dtype; lists, scalars and other dtypes become float32.
        requires_grad: whether :func:`backward` should populate ``grad``.
        dtype: optional explicit dtype.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep = isinstance(data, (Tensor, np.ndarray, np.floating))
        arr = data.data if isinstance(data, Tensor) else np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)

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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operators
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # method forms
    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap ``value`` as a constant tensor (matching ``like``'s dtype)."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    arr = np.asarray(value)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        dtype = DEFAULT_DTYPE
    return Tensor(arr, dtype=dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data
    _count(out.size)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    _count(out.size)

    def bw(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent
    _count(out.size)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(out, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a: Tensor) -> Tensor:
    _log_branch(a.data >= 0)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    out = np.maximum(a.data, 0)
    _log_branch(out > 0)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    _log_branch(inside)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data >= b.data
    _log_branch(pick_a)

    def bw(g):
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    _log_branch(pick_a)

    def bw(g):
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.asarray(out), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise ShapeError(f"cannot concatenate {tensors[0].shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, bw)


def split(a: Tensor, index: int, axis: int) -> tuple[Tensor, Tensor]:
    """Split ``a`` into ``[:index]`` and ``[index:]`` along ``axis``."""
    axis = axis % a.ndim
    head = [slice(None)] * a.ndim
    tail = [slice(None)] * a.ndim
    head[axis] = slice(0, index)
    tail[axis] = slice(index, None)
    return getitem(a, tuple(head)), getitem(a, tuple(tail))


# ---------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., m, n] @ b[..., n, p]``."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    _count(out.size * a.shape[-1])

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"axis {axis} out of range for shape {a.shape}")
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    _count(out.size)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row of the last axis to mean 0 / variance 1, then ``* gamma + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"norm parameters {gamma.shape}/{beta.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    _count(3 * out.size)

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx = g * gamma.data
        gx = rstd * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# convolution (channels-last cross-correlation)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return cols


def _conv_dense(x, w, stride, padding, need_x=True):
    n, h, wd, c = x.shape
    kh, kw, _, cout = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if kh == kw == 1 and stride == 1 and padding == 0:
        cols = x.reshape(-1, c)
    else:
        cols = _im2col(_pad(x, padding), kh, kw, stride, ho, wo).reshape(-1, kh * kw * c)
    out = (cols @ w.reshape(-1, cout)).reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        if not need_x:
            return None, gw
        gcols = g2 @ w.reshape(-1, cout).T
        if kh == kw == 1 and stride == 1 and padding == 0:
            return gcols.reshape(x.shape), gw
        gcols = gcols.reshape(n, ho, wo, kh, kw, c)
        gxp = np.zeros((n, h + 2 * padding, wd + 2 * padding, c), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
        return gxp[:, padding : padding + h, padding : padding + wd, :], gw

    return out, bw


def _conv_depthwise(x, w, stride, padding):
    n, h, wd, c = x.shape
    kh, kw = w.shape[:2]
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    xp = _pad(x, padding)
    taps = w[:, :, 0, :]
    out = np.zeros((n, ho, wo, c), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] * taps[i, j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                view = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gw[i, j, 0] = (g * xp[view]).sum(axis=(0, 1, 2))
                gxp[view] += g * taps[i, j]
        return gxp[:, padding : padding + h, padding : padding + wd, :], gw

    return out, bw


def _conv_grouped(x, w, stride, padding, groups):
    cin_g = x.shape[-1] // groups
    cout_g = w.shape[-1] // groups
    parts = [
        _conv_dense(
            x[..., gi * cin_g : (gi + 1) * cin_g], w[..., gi * cout_g : (gi + 1) * cout_g], stride, padding
        )
        for gi in range(groups)
    ]
    out = np.concatenate([p[0] for p in parts], axis=-1)

    def bw(g):
        grads = [p[1](g[..., gi * cout_g : (gi + 1) * cout_g]) for gi, p in enumerate(parts)]
        return np.concatenate([gx for gx, _ in grads], -1), np.concatenate([gw for _, gw in grads], -1)

    return out, bw


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation of ``x[N?, H, W, Cin]`` with ``w[kh, kw, Cin/groups, Cout]``.

    Output spatial size is ``floor((H + 2*padding - kh) / stride) + 1``.
    """
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeError(f"conv2d expects HxWxC or NxHxWxC input and 4-d kernel, got {x.shape}, {w.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    kh, kw, cin_g, cout = w.shape
    cin = xd.shape[-1]
    if groups < 1 or cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}, groups={groups}")
    ho = conv_output_size(xd.shape[1], kh, stride, padding)
    wo = conv_output_size(xd.shape[2], kw, stride, padding)
    if stride < 1 or ho < 1 or wo < 1:
        raise ShapeError(f"conv2d invalid geometry: input {x.shape}, kernel {w.shape}, stride={stride}, padding={padding}")

    if groups == 1:
        out, inner = _conv_dense(xd, w.data, stride, padding, need_x=x.requires_grad)
    elif groups == cin == cout:
        out, inner = _conv_depthwise(xd, w.data, stride, padding)
    else:
        out, inner = _conv_grouped(xd, w.data, stride, padding, groups)
    _count(out.size * kh * kw * cin_g)

    def bw(g):
        gx, gw = inner(g if batched else g[None])
        if gx is not None and not batched:
            gx = gx[0]
        return gx, gw

    return _make(out if batched else out[0], (x, w), bw)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``root``.

    Raises:
        ContractError: if ``root`` is not a scalar or is not part of a graph.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("root does not depend on any tensor that requires grad")

    nodes: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


@dataclass
class GradCheckStats:
    probed: int = 0
    skipped: int = 0


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    wrt: Sequence[Tensor] | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    skip_kinks: bool = False,
    stats: GradCheckStats | None = None,
) -> float:
    """Max relative error between backward and central differences.

    ``f(x)`` must return a scalar tensor. Gradients are checked for ``x``
    and/or the tensors in ``wrt`` (e.g. layer parameters). With
    ``max_entries`` only a seeded random subset of each tensor's entries is
    probed. Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.

    With ``skip_kinks`` an entry is left out when the +-eps probes change
    the branch taken by any relu/abs/clip/max/min, i.e. when the central
    difference straddles a non-differentiable point. The decision uses
    only forward evaluations, never the analytic gradient.
    """
    targets = list(wrt) if wrt is not None else [x]
    flags = [t.requires_grad for t in targets]
    stats = stats if stats is not None else GradCheckStats()
    for t in targets:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None

    def evaluate():
        if not skip_kinks:
            return f(x).item(), None
        with record_branches() as log:
            value = f(x).item()
        return value, log

    try:
        loss = f(x)
        backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in targets]
        rng = np.random.default_rng(seed)
        worst = 0.0
        with no_grad():
            _, base = evaluate()
            for t, a in zip(targets, analytic):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_entries is not None and flat.size > max_entries:
                    idx = rng.choice(flat.size, size=max_entries, replace=False)
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp, lp = evaluate()
                    flat[i] = orig - eps
                    fm, lm = evaluate()
                    flat[i] = orig
                    if skip_kinks and (lp != base or lm != base):
                        stats.skipped += 1
                        continue
                    stats.probed += 1
                    num = (fp - fm) / (2 * eps)
                    ana = float(a.reshape(-1)[i])
                    worst = max(worst, abs(ana - num) / max(1e-8, abs(ana) + abs(num)))
        return worst
    finally:
        for t, flag in zip(targets, flags):
            t.requires_grad = flag
