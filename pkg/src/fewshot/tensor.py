"""Dense-tensor reverse-mode autodiff engine.

Every model in the toolkit is built from the primitives here: a `Tensor`
wraps a numpy array (f32 or f64) plus an optional gradient, ops record
closures onto the output node, and `backward` replays them in reverse
topological order. Single-threaded per graph; forward ops on distinct
tensors are safe to run concurrently.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NumericError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

NORM_FLOOR = 1e-12  # cosine/euclidean degenerate-input guard
PROB_CLAMP = 1e-12  # cross-entropy log clamp


def _np_dtype(dtype):
    if dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    d = np.dtype(dtype)
    if d not in _NAMES:
        raise ShapeError(f"unsupported dtype {dtype!r}; expected f32 or f64")
    return d


class Tensor:
    """A dense n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, dtype=None, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=_np_dtype(dtype) if dtype is not None else None)
        if arr.dtype not in _NAMES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._done = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return _NAMES[self.data.dtype]

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.dtype}, op={self._op})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        """Install (or reset) an all-zero gradient array."""
        self.grad = np.zeros_like(self.data)

    def detach(self):
        """A new leaf sharing this tensor's data, with gradients cut."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, dtype="f32", requires_grad=False):
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def zeros(shape, dtype="f32", requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_np_dtype(dtype)), requires_grad=requires_grad)


def constant(t: Tensor) -> Tensor:
    """View of `t` with gradients cut (shares the underlying array)."""
    out = Tensor.__new__(Tensor)
    out.data = t.data
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._backward = None
    out._op = "constant"
    out._done = False
    return out


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data, op, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._done = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _check_same_dtype(op, a: Tensor, b: Tensor):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _unbroadcast(g, shape):
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- graph traversal ---------------------------------------------------------

def backward(loss: Tensor):
    """Reverse-mode accumulation from a scalar loss.

    Gradients add into `.grad` of every reachable tensor with
    requires_grad set. A graph can only be traversed once; reusing a
    consumed op node raises GraphError.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise GraphError("backward already ran on this graph")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._backward is not None and node._done:
            raise GraphError(f"graph node {node._op!r} was already consumed by a previous backward")
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._done = True
            if node.grad is not None:
                node._backward(node.grad)


# -- elementwise and structural ops -------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_same_dtype("add", a, b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), bwd)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_same_dtype("sub", a, b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, "sub", (a, b), bwd)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_same_dtype("mul", a, b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), bwd)


def neg(a: Tensor):
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), bwd)


def reshape(a: Tensor, shape):
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, "reshape", (a,), bwd)


def transpose(a: Tensor):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    data = np.ascontiguousarray(a.data.T)

    def bwd(g):
        _accum(a, g.T)

    return _make(data, "transpose", (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int):
    """Contiguous slice [start, start+length) along `axis`."""
    if axis not in (0, 1):
        raise ShapeError(f"narrow supports axis 0 or 1, got {axis}")
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow range [{start}, {start + length}) outside extent {a.data.shape[axis]}"
        )
    idx = (slice(start, start + length),) if axis == 0 else (slice(None), slice(start, start + length))
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, "narrow", (a,), bwd)


def concat(parts, axis=0):
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        off = 0
        for p, s in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(off, off + s)
                _accum(p, g[tuple(sl)])
            off += s

    return _make(data, "concat", tuple(parts), bwd)


def repeat_rows(a: Tensor, times: int):
    """Each row repeated `times` consecutively: [r0,r0,..,r1,r1,..]."""
    data = np.repeat(a.data, times, axis=0)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape[0], times, *a.data.shape[1:]).sum(axis=1))

    return _make(data, "repeat_rows", (a,), bwd)


def tile_rows(a: Tensor, times: int):
    """Whole block repeated `times`: [r0,r1,..,r0,r1,..]."""
    data = np.tile(a.data, (times,) + (1,) * (a.data.ndim - 1))

    def bwd(g):
        _accum(a, g.reshape(times, *a.data.shape).sum(axis=0))

    return _make(data, "tile_rows", (a,), bwd)


def sum_(a: Tensor, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.data.dtype)

    def bwd(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            gg = np.expand_dims(gg, axes)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(data, "sum", (a,), bwd)


def mean(a: Tensor, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in axes]))
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.data.dtype)

    def bwd(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            axes_ = axis if isinstance(axis, tuple) else (axis,)
            gg = np.expand_dims(gg, axes_)
        _accum(a, np.broadcast_to(gg, a.data.shape) / np.asarray(count, dtype=a.data.dtype))

    return _make(data, "mean", (a,), bwd)


def matmul(a: Tensor, b: Tensor):
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, "matmul", (a, b), bwd)


# -- activations ---------------------------------------------------------------

def relu(a: Tensor):
    data = np.maximum(a.data, 0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return _make(data, "relu", (a,), bwd)


def sigmoid(a: Tensor):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, "sigmoid", (a,), bwd)


def tanh(a: Tensor):
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, "tanh", (a,), bwd)


def softmax_rows(a: Tensor):
    """Row-wise softmax of a [B, N] tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects [B, N], got shape {a.data.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        _accum(a, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, "softmax_rows", (a,), bwd)


# -- dense / conv / pool layers -------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor):
    """x[B,D] . weight[E,D]^T + bias[E] -> [B,E]."""
    _check_same_dtype("linear", x, weight)
    _check_same_dtype("linear", x, bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"linear: input {x.data.shape} incompatible with weight {weight.data.shape}")
    if bias.data.shape != (weight.data.shape[0],):
        raise ShapeError(f"linear: bias {bias.data.shape} incompatible with weight {weight.data.shape}")
    data = x.data @ weight.data.T + bias.data

    def bwd(g):
        if x.requires_grad:
            _accum(x, g @ weight.data)
        if weight.requires_grad:
            _accum(weight, g.T @ x.data)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=0))

    return _make(data, "linear", (x, weight, bias), bwd)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0):
    """2-d cross-correlation of x[B,C,H,W] with kernel[F,C,kh,kw]."""
    _check_same_dtype("conv2d", x, kernel)
    _check_same_dtype("conv2d", x, bias)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.data.shape} and kernel {kernel.data.shape} must be rank 4")
    B, C, H, W = x.data.shape
    F, Ck, kh, kw = kernel.data.shape
    if C != Ck:
        raise ShapeError(f"conv2d: input channels {x.data.shape} do not match kernel {kernel.data.shape}")
    if bias.data.shape != (F,):
        raise ShapeError(f"conv2d: bias {bias.data.shape} does not match kernel {kernel.data.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be positive, got {stride}")
    if pad < 0:
        raise ShapeError(f"conv2d: pad must be non-negative, got {pad}")
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise ShapeError(
            f"conv2d: padded input {(H + 2 * pad, W + 2 * pad)} smaller than kernel window {(kh, kw)}"
        )
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d: non-finite input")

    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    win = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = kernel.data.reshape(F, C * kh * kw)
    out2 = cols @ wmat.T + bias.data
    data = np.ascontiguousarray(out2.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, F)
        if bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if kernel.requires_grad:
            _accum(kernel, (g2.T @ cols).reshape(kernel.data.shape))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dpad = np.zeros_like(padded)
            for u in range(kh):
                for v in range(kw):
                    dpad[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride] += dcols[:, :, :, :, u, v]
            _accum(x, dpad[:, :, pad:pad + H, pad:pad + W] if pad else dpad)

    return _make(data, "conv2d", (x, kernel, bias), bwd)


def maxpool2d(x: Tensor, k: int, stride: int):
    """Max pooling with window k and given stride; ties route the gradient to
    the first (row-major) maximal element of the window."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: input must be rank 4, got shape {x.data.shape}")
    B, C, H, W = x.data.shape
    if k > H or k > W:
        raise ShapeError(f"maxpool2d: window {k} exceeds input {(H, W)}")
    if k < 1 or stride < 1:
        raise ShapeError(f"maxpool2d: window and stride must be positive, got k={k} stride={stride}")
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    B_, C_, Ho, Wo = win.shape[:4]
    flat = win.reshape(B, C, Ho, Wo, k * k)
    am = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
    data = np.ascontiguousarray(data)

    def bwd(g):
        bI, cI, iI, jI = np.indices((B, C, Ho, Wo))
        rows = iI * stride + am // k
        cols_ = jI * stride + am % k
        dx = np.zeros_like(x.data)
        np.add.at(dx, (bI, cI, rows, cols_), g)
        _accum(x, dx)

    return _make(data, "maxpool2d", (x,), bwd)


# -- recurrent cell --------------------------------------------------------------

def lstm_step(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """One LSTM cell step.

    Gate order in the packed weights is (input, forget, candidate, output);
    input/forget/output gates are sigmoid, the candidate is tanh. The hidden
    input `h` may be wider than the cell state `c` (used by attention
    readers that concatenate extra context onto the recurrent state).
    Returns (h', c').
    """
    B, D = x.data.shape
    H = c.data.shape[1]
    if h.data.shape[0] != B or c.data.shape[0] != B:
        raise ShapeError(f"lstm_step: batch mismatch x={x.data.shape} h={h.data.shape} c={c.data.shape}")
    if wx.data.shape != (4 * H, D):
        raise ShapeError(f"lstm_step: wx {wx.data.shape} incompatible with x {x.data.shape} and cell width {H}")
    if wh.data.shape != (4 * H, h.data.shape[1]):
        raise ShapeError(f"lstm_step: wh {wh.data.shape} incompatible with h {h.data.shape}")
    if b.data.shape != (4 * H,):
        raise ShapeError(f"lstm_step: bias {b.data.shape} must have extent {4 * H}")

    z = add(linear(x, wx, b), matmul(h, transpose(wh)))
    i = sigmoid(narrow(z, 1, 0, H))
    f = sigmoid(narrow(z, 1, H, H))
    g = tanh(narrow(z, 1, 2 * H, H))
    o = sigmoid(narrow(z, 1, 3 * H, H))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# -- losses and similarity metrics ------------------------------------------------

def _validate_one_hot(y: np.ndarray):
    if y.ndim != 2:
        raise ShapeError(f"targets must be [B, N], got shape {y.shape}")
    if not np.logical_or(y == 0, y == 1).all() or not (y.sum(axis=1) == 1).all():
        raise NumericError("targets are not one-hot rows")


def softmax_cross_entropy(inputs: Tensor, targets: Tensor, input_is_probs: bool = False):
    """Mean negative log-likelihood of the true class.

    `inputs` are logits by default; pass input_is_probs=True when rows are
    already probability distributions. Probabilities are clamped to
    [1e-12, 1] before the log.
    """
    if inputs.data.shape != targets.data.shape:
        raise ShapeError(f"inputs {inputs.data.shape} and targets {targets.data.shape} differ")
    y = targets.data
    _validate_one_hot(y)
    B = y.shape[0]

    if input_is_probs:
        rowsum = inputs.data.sum(axis=1)
        if np.abs(rowsum - 1.0).max() > 1e-6:
            raise NumericError(f"probability rows must sum to 1 within 1e-6 (worst {rowsum[np.abs(rowsum - 1).argmax()]:.8f})")
        p = (inputs.data * y).sum(axis=1)
        pc = np.clip(p, PROB_CLAMP, 1.0)
        data = np.asarray(-np.log(pc).mean(), dtype=inputs.data.dtype)

        def bwd(g):
            active = ((p >= PROB_CLAMP) & (p <= 1.0)).astype(inputs.data.dtype)
            _accum(inputs, (-(y * (active / pc)[:, None]) / B) * g)

        return _make(data, "cross_entropy_probs", (inputs,), bwd)

    z = inputs.data - inputs.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    p = (s * y).sum(axis=1)
    pc = np.clip(p, PROB_CLAMP, 1.0)
    data = np.asarray(-np.log(pc).mean(), dtype=inputs.data.dtype)

    def bwd(g):
        active = (p >= PROB_CLAMP).astype(inputs.data.dtype)
        _accum(inputs, ((s - y) * active[:, None] / B) * g)

    return _make(data, "cross_entropy_logits", (inputs,), bwd)


def distance_euclidean(a: Tensor, b: Tensor):
    """Per-row L2 distance of [B,D] tensors; gradient at zero distance is 0."""
    _check_same_dtype("distance_euclidean", a, b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"distance_euclidean: shapes {a.data.shape} and {b.data.shape} must match as [B,D]")
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=1))

    def bwd(g):
        safe = np.where(d > 0, d, 1.0)
        unit = diff / safe[:, None] * (d > 0)[:, None]
        if a.requires_grad:
            _accum(a, g[:, None] * unit)
        if b.requires_grad:
            _accum(b, -g[:, None] * unit)

    return _make(d, "distance_euclidean", (a, b), bwd)


def cosine_similarity(a: Tensor, b: Tensor):
    """Per-row cosine of [B,D] tensors with norms floored at 1e-12."""
    _check_same_dtype("cosine_similarity", a, b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"cosine_similarity: shapes {a.data.shape} and {b.data.shape} must match as [B,D]")
    na = np.sqrt((a.data * a.data).sum(axis=1))
    nb = np.sqrt((b.data * b.data).sum(axis=1))
    naf = np.maximum(na, NORM_FLOOR)
    nbf = np.maximum(nb, NORM_FLOOR)
    dot = (a.data * b.data).sum(axis=1)
    c = dot / (naf * nbf)

    def bwd(g):
        if a.requires_grad:
            da = b.data / (naf * nbf)[:, None] - a.data * (dot * (na > NORM_FLOOR) / (naf ** 3 * nbf))[:, None]
            _accum(a, g[:, None] * da)
        if b.requires_grad:
            db = a.data / (naf * nbf)[:, None] - b.data * (dot * (nb > NORM_FLOOR) / (nbf ** 3 * naf))[:, None]
            _accum(b, g[:, None] * db)

    return _make(c, "cosine_similarity", (a, b), bwd)
