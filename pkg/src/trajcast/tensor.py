"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor requiring gradients records a node
holding its inputs and a backward closure. ``backward`` walks the nodes
reachable from a scalar loss in reverse creation order, so each node is
visited exactly once after every consumer of its output.

Only scalar broadcasting is supported. Row-vector biases go through the
explicit :func:`add_bias` operation.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "DimensionError", "GraphError", "tensor", "zeros", "ones",
    "add", "sub", "mul", "neg", "scale", "sigmoid", "tanh", "relu", "square",
    "elementwise", "matmul", "transpose", "add_bias", "linear", "concat",
    "maxpool_rows", "max_axis", "reshape", "take_rows", "slice_cols",
    "total", "conv2d", "bilinear_gather", "no_grad_value", "backward", "set_debug",
    "permute", "segment_max", "lstm_cell", "gru_cell",
]

_counter = itertools.count()
_DEBUG = False


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on every forward result."""
    global _DEBUG
    _DEBUG = bool(flag)


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the recorded graph (non-scalar loss, reuse)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_order", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._order = next(_counter)
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape))


def no_grad_value(x: Tensor) -> Tensor:
    """Detached copy of ``x``; gradients do not flow through it."""
    return Tensor(x.data.copy())


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._order = next(_counter)
    out._consumed = False
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.full(t.shape, g.sum())


def _scalar_value(t: Tensor):
    return t.data.reshape(()) if _is_scalar(t) else t.data


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out_data = _scalar_value(a) + _scalar_value(b) if a.shape != b.shape else a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b))

    return _make(np.asarray(out_data, dtype=np.float64), (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    out_data = _scalar_value(a) - _scalar_value(b) if a.shape != b.shape else a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b))

    return _make(np.asarray(out_data, dtype=np.float64), (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    av, bv = (_scalar_value(a), _scalar_value(b)) if a.shape != b.shape else (a.data, b.data)
    out_data = np.asarray(av * bv, dtype=np.float64)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * bv, a))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * av, b))

    return _make(out_data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant."""
    c = float(c)
    return _make(a.data * c, (a,), lambda g: a._accumulate(g * c))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: a._accumulate(g * mask))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: a._accumulate(2.0 * g * x))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul,
    "sigmoid": sigmoid, "tanh": tanh, "relu": relu,
}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch one of add, sub, mul, sigmoid, tanh, relu by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ B.T)
        if b.requires_grad:
            b._accumulate(A.T @ g)

    return _make(A @ B, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: a._accumulate(g.T))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a ``[1 x d]`` (or ``[d]``) bias to every row of an ``[n x d]`` input."""
    if x.data.ndim != 2 or b.size != x.shape[1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")
    bshape = b.shape

    def bw(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0).reshape(bshape))

    return _make(x.data + b.data.reshape(1, -1), (x, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Rows of ``x`` mapped by ``weight`` of shape ``[out x in]``: ``x W^T + b``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    X, W = x.data, weight.data
    out = X @ W.T
    if bias is not None:
        if bias.size != W.shape[0]:
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {W.shape}")
        out = out + bias.data.reshape(1, -1)
        parents = (x, weight, bias)
        bshape = bias.shape
    else:
        parents = (x, weight)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ W)
        if weight.requires_grad:
            weight._accumulate(g.T @ X)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0).reshape(bshape))

    return _make(out, parents, bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: no inputs")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != ax
        ):
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis`` (kept as a size-1 dimension).

    The backward pass routes each output's gradient to a single argmax
    entry; ties resolve to the lowest index.
    """
    if x.shape[axis] < 1:
        raise ValueError("max over an empty axis")
    idx = np.argmax(x.data, axis=axis)  # first occurrence on ties
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(x.data, idx_k, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx_k, g, axis=axis)
        x._accumulate(full)

    return _make(out, (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    out = x.data.reshape(tuple(shape))
    return _make(out, (x,), lambda g: x._accumulate(g.reshape(old)))


def take_rows(x: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows of ``x`` (repeats allowed); backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        x._accumulate(full)

    return _make(x.data[index], (x,), bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a matrix."""

    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return _make(x.data[:, start:stop].copy(), (x,), bw)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a ``[1 x 1]`` scalar."""
    shp = x.shape
    return _make(np.array([[x.data.sum()]]), (x,), lambda g: x._accumulate(np.full(shp, g.reshape(()))))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: x._accumulate(g.transpose(inv)))


def segment_max(x: Tensor, starts: Sequence[int] | np.ndarray) -> Tensor:
    """Column-wise maximum over contiguous row segments.

    ``starts`` lists the first row of each segment (ascending, first entry 0);
    the result has one row per segment. Each output entry's gradient goes
    to exactly one input row, the lowest-indexed maximiser.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"segment_max: expected a matrix, got {x.shape}")
    starts = np.asarray(starts, dtype=np.intp)
    n = x.shape[0]
    if n == 0 or starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= n:
        raise ValueError("segment_max: segments must be non-empty, ascending and start at row 0")
    X = x.data
    out = np.maximum.reduceat(X, starts, axis=0)
    seg = np.repeat(np.arange(starts.size), np.diff(np.append(starts, n)))
    rows = np.broadcast_to(np.arange(n)[:, None], X.shape)
    hit = X == out[seg]
    hit |= np.isnan(X) & np.isnan(out[seg])      # a NaN maximum is owned by its first NaN row
    cand = np.where(hit, rows, n)
    arg = np.minimum.reduceat(cand, starts, axis=0)
    cols = np.broadcast_to(np.arange(X.shape[1]), arg.shape)

    def bw(g):
        full = np.zeros_like(X)
        full[arg, cols] = g
        x._accumulate(full)

    return _make(out, (x,), bw)


def maxpool_rows(x: Tensor) -> Tensor:
    """Column-wise maximum of an ``[n x d]`` matrix, returned as ``[1 x d]``."""
    if x.data.ndim != 2:
        raise DimensionError(f"maxpool_rows: expected a matrix, got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("maxpool_rows: empty input")
    return segment_max(x, [0])


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 2, padding: int = 1) -> Tensor:
    """Cross-correlation of ``[B, C_in, H, W]`` maps with ``[C_out, C_in, k, k]`` kernels.

    A 3-D ``[C_in, H, W]`` input is treated as a batch of one and the
    result keeps that rank.
    """
    squeeze = x.data.ndim == 3
    X = x.data[None] if squeeze else x.data
    if X.ndim != 4 or weight.data.ndim != 4 or weight.shape[1] != X.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    b, c_in, h, w = X.shape
    c_out, _, k, _ = weight.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    W = weight.data
    # im2col: [B, C_in*k*k, ho, wo]
    cols = np.empty((b, c_in, k, k, ho, wo))
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    cols = cols.reshape(b, c_in * k * k, ho * wo)
    Wm = W.reshape(c_out, -1)
    out = np.matmul(Wm, cols) + bias.data.reshape(1, -1, 1)
    out = out.reshape(b, c_out, ho, wo)

    def bw(g):
        G = (g[None] if squeeze else g).reshape(b, c_out, ho * wo)
        if bias.requires_grad:
            bias._accumulate(G.sum(axis=(0, 2)).reshape(bias.shape))
        if weight.requires_grad:
            weight._accumulate(np.matmul(G, cols.transpose(0, 2, 1)).sum(axis=0).reshape(W.shape))
        if x.requires_grad:
            gcols = np.matmul(Wm.T, G).reshape(b, c_in, k, k, ho, wo)
            gxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    gxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += gcols[:, :, ki, kj]
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
            x._accumulate(gx[0] if squeeze else gx)

    return _make(out[0] if squeeze else out, (x, weight, bias), bw)


def bilinear_gather(fm: Tensor, rows, cols=None, batch_index=None) -> Tensor:
    """Bilinearly sample feature maps at continuous ``(row, col)`` points.

    ``fm`` is ``[C, Hf, Wf]`` or ``[B, C, Hf, Wf]`` (then ``batch_index``
    picks the map per point). Points are given either as two arrays
    ``rows, cols`` or as one ``[P, 2]`` tensor of ``(row, col)``, in which
    case gradients also flow to the coordinates. Cell ``(a, b)`` sits at
    integer coordinates; neighbours outside the map read as zero, which
    keeps the result linear in ``fm``. Returns ``[P, C]``.
    """
    F = fm.data[None] if fm.data.ndim == 3 else fm.data
    nb, c, hf, wf = F.shape
    coord_t = rows if isinstance(rows, Tensor) else None
    if coord_t is not None:
        rows, cols = coord_t.data[:, 0], coord_t.data[:, 1]
    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    bidx = np.zeros(rows.size, dtype=np.intp) if batch_index is None else np.asarray(batch_index, dtype=np.intp).ravel()
    with np.errstate(invalid="ignore"):          # non-finite points read as zero
        r0 = np.floor(rows).astype(np.intp)
        c0 = np.floor(cols).astype(np.intp)
    fr = rows - r0
    fc = cols - c0
    n = rows.size
    idx = np.zeros((n, 4), dtype=np.intp)
    ok = np.zeros((n, 4), dtype=bool)
    wts = np.zeros((n, 4))
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    for j, (dr, dc) in enumerate(corners):
        rr, cc = r0 + dr, c0 + dc
        wgt = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
        ok[:, j] = (rr >= 0) & (rr < hf) & (cc >= 0) & (cc < wf)
        idx[:, j] = np.where(ok[:, j], (bidx * hf + rr) * wf + cc, 0)
        wts[:, j] = np.where(ok[:, j], wgt, 0.0)
    # [B*Hf*Wf, C] layout makes each sample a row gather
    flat = F.transpose(0, 2, 3, 1).reshape(nb * hf * wf, c)
    vals = flat[idx] * ok[:, :, None]          # [P, 4, C]
    out = np.einsum("pj,pjc->pc", wts, vals)
    shape = fm.shape
    parents = (fm,) if coord_t is None else (fm, coord_t)

    def bw(g):
        if fm.requires_grad:
            gflat = np.zeros((nb * hf * wf, c))
            for j in range(4):
                np.add.at(gflat, idx[:, j], g * wts[:, j:j + 1])
            gf = gflat.reshape(nb, hf, wf, c).transpose(0, 3, 1, 2)
            fm._accumulate(gf.reshape(shape))
        if coord_t is not None and coord_t.requires_grad:
            v00, v01, v10, v11 = (vals[:, j] for j in range(4))
            d_row = (1.0 - fc)[:, None] * (v10 - v00) + fc[:, None] * (v11 - v01)
            d_col = (1.0 - fr)[:, None] * (v01 - v00) + fr[:, None] * (v11 - v10)
            coord_t._accumulate(np.stack([(g * d_row).sum(axis=1), (g * d_col).sum(axis=1)], axis=1))

    return _make(out, parents, bw)


def _sig(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(x: Tensor, hc: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Fused LSTM step on a packed ``[h | c]`` state of shape ``[n x 2*hidden]``.

    Gate order in the weights is ``[input, forget, candidate, output]``.
    Returns the packed next state.
    """
    n = w_hh.shape[1]
    if hc.data.ndim != 2 or hc.shape[1] != 2 * n or x.shape[0] != hc.shape[0] or x.shape[1] != w_ih.shape[1]:
        raise DimensionError(f"lstm_cell: input {x.shape}, state {hc.shape}, weights {w_ih.shape}/{w_hh.shape}")
    X = x.data
    Hp = hc.data[:, :n]
    Cp = hc.data[:, n:]
    z = X @ w_ih.data.T + Hp @ w_hh.data.T + bias.data.reshape(1, -1)
    i = _sig(z[:, :n])
    f = _sig(z[:, n:2 * n])
    gg = np.tanh(z[:, 2 * n:3 * n])
    o = _sig(z[:, 3 * n:])
    c_new = f * Cp + i * gg
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new], axis=1)

    def bw(g):
        gh, gc = g[:, :n], g[:, n:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[:, :n] = dc * gg * i * (1.0 - i)
        dz[:, n:2 * n] = dc * Cp * f * (1.0 - f)
        dz[:, 2 * n:3 * n] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * n:] = gh * tc * o * (1.0 - o)
        if x.requires_grad:
            x._accumulate(dz @ w_ih.data)
        if hc.requires_grad:
            hc._accumulate(np.concatenate([dz @ w_hh.data, dc * f], axis=1))
        if w_ih.requires_grad:
            w_ih._accumulate(dz.T @ X)
        if w_hh.requires_grad:
            w_hh._accumulate(dz.T @ Hp)
        if bias.requires_grad:
            bias._accumulate(dz.sum(axis=0).reshape(bias.shape))

    return _make(out, (x, hc, w_ih, w_hh, bias), bw)


def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """Fused GRU step, gate order ``[reset, update, candidate]``.

    ``h' = (1 - u) * h + u * n`` with ``n = tanh(x W_n + b_n + r * (h U_n + c_n))``.
    """
    n = h.shape[1]
    if h.data.ndim != 2 or x.shape[0] != h.shape[0] or x.shape[1] != w_ih.shape[1] or w_hh.shape[1] != n:
        raise DimensionError(f"gru_cell: input {x.shape}, state {h.shape}, weights {w_ih.shape}/{w_hh.shape}")
    X, Hp = x.data, h.data
    gx = X @ w_ih.data.T + b_ih.data.reshape(1, -1)
    gh = Hp @ w_hh.data.T + b_hh.data.reshape(1, -1)
    r = _sig(gx[:, :n] + gh[:, :n])
    u = _sig(gx[:, n:2 * n] + gh[:, n:2 * n])
    hn = gh[:, 2 * n:]
    cand = np.tanh(gx[:, 2 * n:] + r * hn)
    out = Hp + u * (cand - Hp)

    def bw(g):
        dcand = g * u * (1.0 - cand * cand)
        du = g * (cand - Hp) * u * (1.0 - u)
        dr = dcand * hn * r * (1.0 - r)
        dgx = np.concatenate([dr, du, dcand], axis=1)
        dgh = np.concatenate([dr, du, dcand * r], axis=1)
        if x.requires_grad:
            x._accumulate(dgx @ w_ih.data)
        if h.requires_grad:
            h._accumulate(g * (1.0 - u) + dgh @ w_hh.data)
        if w_ih.requires_grad:
            w_ih._accumulate(dgx.T @ X)
        if w_hh.requires_grad:
            w_hh._accumulate(dgh.T @ Hp)
        if b_ih.requires_grad:
            b_ih._accumulate(dgx.sum(axis=0).reshape(b_ih.shape))
        if b_hh.requires_grad:
            b_hh._accumulate(dgh.sum(axis=0).reshape(b_hh.shape))

    return _make(out, (x, h, w_ih, w_hh, b_ih, b_hh), bw)


def _reachable(loss: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._order, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires it and feeds ``loss``.

    Leaf gradients accumulate into existing buffers, so several losses can
    be back-propagated before one optimizer step. Back-propagating the same
    loss twice raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this graph")
    loss._consumed = True
    if not loss.requires_grad:
        return
    if loss._backward is None:
        loss._accumulate(np.ones_like(loss.data))
        return
    nodes = _reachable(loss)
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        g = node.grad
        if g is None:
            continue
        node._backward(g)
        # interior buffers are dropped once propagated
        node.grad = None
