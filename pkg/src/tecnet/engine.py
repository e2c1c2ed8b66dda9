"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A ``Tensor`` wraps a numpy array.  While a ``Tape`` is active, every
operation that touches a differentiable input appends a record holding the
output, the inputs, and a closure that maps the output gradient to input
gradients.  ``backward(loss)`` replays those records in reverse, so each node
is visited exactly once regardless of fan-out.

The tape is rebuilt on every forward pass; nothing here is compiled or
cached between calls.  All arithmetic runs in float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf, expit

from .errors import ConfigurationError, DimensionError, UsageError

__all__ = [
    "Tensor", "Tape", "backward", "as_tensor",
    "add", "sub", "mul", "div", "neg", "matmul",
    "reduce_sum", "mean_all",
    "reshape", "permute", "concat", "pad2d", "roll2d",
    "relu", "gelu", "sigmoid", "softmax", "layernorm",
    "conv2d", "depthwise_conv2d",
    "bilinear_gather", "bilinear_sample",
    "global_avg_pool", "index_select",
    "upsample_nearest", "upsample_bilinear",
]


# ---------------------------------------------------------------- tensors

class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop.

    ``requires_grad`` marks leaf tensors (parameters).  Leaves get a
    pre-allocated ``grad`` buffer so that parameters untouched by a given
    loss report an exact zero gradient rather than None.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node = None
        self.name = name

    # -- inspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the underlying storage."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar (bodies live below with the other primitives) ----

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def backward(self) -> None:
        backward(self)


# ---------------------------------------------------------------- tape

class _Node:
    __slots__ = ("out", "inputs", "backward_fn", "tape")

    def __init__(self, out, inputs, backward_fn, tape):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.tape = tape


class Tape:
    """Records operations while active.  Use as a context manager."""

    _stack: list = []

    def __init__(self):
        self.nodes = []

    def __enter__(self) -> "Tape":
        if Tape._stack:
            # A nested tape would capture part of the graph and leave the
            # outer backward sweep silently incomplete.
            raise UsageError("a tape is already recording; tapes do not nest")
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._stack.pop()

    @staticmethod
    def active():
        return Tape._stack[-1] if Tape._stack else None


def _tracked(t) -> bool:
    return isinstance(t, Tensor) and (t.requires_grad or t.node is not None)


def _record(out: Tensor, inputs: tuple, backward_fn) -> Tensor:
    """Attach a tape record to `out` if recording applies."""
    tape = Tape.active()
    if tape is not None and any(_tracked(t) for t in inputs):
        node = _Node(out, inputs, backward_fn, tape)
        out.node = node
        tape.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss.

    Gradients accumulate into ``.grad`` of every reachable leaf; leaves the
    loss does not depend on keep their zero buffer untouched.  Works after
    the recording tape's `with` block has exited, since every node keeps a
    reference to its tape.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar, got shape {loss.shape}")
    if loss.node is None:
        raise UsageError("backward() called on a tensor that is not on any tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(loss.node.tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or not isinstance(t, Tensor):
                continue
            if t.node is not None:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            elif t.requires_grad:
                if t.grad is None:
                    # a buffer cleared the torch way (`p.grad = None`)
                    t.grad = np.zeros_like(t.data)
                t.grad += gi


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic

def _binary(a, b, fwd, bwd_a, bwd_b):
    """Shared plumbing for elementwise binary ops with broadcasting."""
    ta = isinstance(a, Tensor)
    tb = isinstance(b, Tensor)
    av = a.data if ta else np.asarray(a, dtype=np.float64)
    bv = b.data if tb else np.asarray(b, dtype=np.float64)
    try:
        out = Tensor(fwd(av, bv))
    except ValueError as e:
        raise DimensionError(f"shapes {av.shape} and {bv.shape} do not broadcast") from e

    inputs = tuple(t for t in (a, b) if isinstance(t, Tensor))

    def backward_fn(g):
        grads = []
        if ta:
            grads.append(_unbroadcast(bwd_a(g, av, bv), av.shape))
        if tb:
            grads.append(_unbroadcast(bwd_b(g, av, bv), bv.shape))
        return grads

    return _record(out, inputs, backward_fn)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, av, bv: g * bv, lambda g, av, bv: g * av)


def div(a, b) -> Tensor:
    return _binary(a, b, np.divide,
                   lambda g, av, bv: g / bv,
                   lambda g, av, bv: -g * av / (bv * bv))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError as e:
        raise DimensionError(f"matmul batch shapes incompatible: {a.shape} vs {b.shape}") from e

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), backward_fn)


# ---------------------------------------------------------------- reductions

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, int):
        axes = (axis % x.ndim,)
    else:
        axes = tuple(a % x.ndim for a in axis)
    out = Tensor(np.sum(x.data, axis=axes, keepdims=keepdims))

    def backward_fn(g):
        if not keepdims:
            kshape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
            g = g.reshape(kshape)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.mean(x.data))
    return _record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes).copy())
    return _record(out, (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing only; advanced indexing is not supported."""
    norm = key if isinstance(key, tuple) else (key,)
    for k in norm:
        if not isinstance(k, (int, np.integer, slice)) and k is not Ellipsis:
            raise UsageError("tensor indexing supports ints, slices and ellipsis only")
    out = Tensor(x.data[key])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _record(out, (x,), backward_fn)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    axis = axis % parts[0].ndim
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _record(out, tuple(parts), backward_fn)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the trailing two axes."""
    pads = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = Tensor(np.pad(x.data, pads))
    h, w = x.shape[-2], x.shape[-1]

    def backward_fn(g):
        sl = (Ellipsis, slice(top, top + h), slice(left, left + w))
        return (g[sl],)

    return _record(out, (x,), backward_fn)


def roll2d(x: Tensor, shift_y: int, shift_x: int) -> Tensor:
    """Cyclically shift the trailing two axes."""
    out = Tensor(np.roll(x.data, (shift_y, shift_x), axis=(-2, -1)))
    return _record(out, (x,),
                   lambda g: (np.roll(g, (-shift_y, -shift_x), axis=(-2, -1)),))


# ---------------------------------------------------------------- pointwise

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) gaussian error linear unit."""
    xv = x.data
    cdf = 0.5 * (1.0 + erf(xv / _SQRT2))
    out = Tensor(xv * cdf)

    def backward_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return _record(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`."""
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def backward_fn(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), backward_fn)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layernorm gain/bias must be ({d},), got {gain.shape} and {bias.shape}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.var(x.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward_fn(g):
        ggain = np.sum(g * xhat, axis=tuple(range(g.ndim - 1)))
        gbias = np.sum(g, axis=tuple(range(g.ndim - 1)))
        gh = g * gain.data
        gx = inv / d * (d * gh
                        - np.sum(gh, axis=-1, keepdims=True)
                        - xhat * np.sum(gh * xhat, axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), backward_fn)


# ---------------------------------------------------------------- convolution

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """View a padded [C, Hp, Wp] image as [C, k, k, ho, wo] sliding windows."""
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    shape = (c, k, k, ho, wo)
    strides = (s0, s1, s2, s1 * stride, s2 * stride)
    return as_strided(xp, shape=shape, strides=strides)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) of [C_in, H, W] with [C_out, C_in, k, k].

    The kernel must be square with odd side.  Output extents follow the
    usual floor rule, (h + 2p - k) // stride + 1; at least one full window
    must fit, otherwise the configuration is rejected.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects x [C,H,W] and w [O,C,k,k], got {x.shape} and {w.shape}")
    cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"conv2d kernel must be square with odd side, got {k}x{k2}")
    if cin_w != cin:
        raise ConfigurationError(f"conv2d channel mismatch: input has {cin}, kernel expects {cin_w}")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ConfigurationError(
            f"conv2d window never fits: input {h}x{wd}, k={k}, padding={padding}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, ho, wo).reshape(cin * k * k, ho * wo)
    w2 = w.data.reshape(cout, cin * k * k)
    y = (w2 @ cols).reshape(cout, ho, wo)
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y)

    def backward_fn(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = (w2.T @ g2).reshape(cin, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                gxp[:, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride] += gcols[:, dy, dx]
        gx = gxp[:, padding:padding + h, padding:padding + wd] if padding else gxp
        if bias is not None:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    inputs = (x, w, bias) if bias is not None else (x, w)
    return _record(out, inputs, backward_fn)


def depthwise_conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 2-D convolution with same padding, stride 1.

    x is [C, H, W], w is [C, k, k] with k odd.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"depthwise_conv2d expects x [C,H,W] and w [C,k,k], got {x.shape} and {w.shape}")
    c, h, wd = x.shape
    cw, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"depthwise kernel must be square with odd side, got {k}x{k2}")
    if cw != c:
        raise ConfigurationError(f"depthwise channel mismatch: input has {c}, kernel has {cw}")
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p)))
    win = _im2col(xp, k, 1, h, wd)            # [C, k, k, H, W]
    y = np.einsum("ckl,cklhw->chw", w.data, win)
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y)

    def backward_fn(g):
        gw = np.einsum("chw,cklhw->ckl", g, win)
        gxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                gxp[:, dy:dy + h, dx:dx + wd] += g * w.data[:, dy, dx][:, None, None]
        gx = gxp[:, p:p + h, p:p + wd]
        if bias is not None:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    inputs = (x, w, bias) if bias is not None else (x, w)
    return _record(out, inputs, backward_fn)


# ---------------------------------------------------------------- sampling

def bilinear_gather(x: Tensor, ys, xs) -> Tensor:
    """Sample x [C, H, W] at fractional positions, zero outside the canvas.

    ys and xs share an arbitrary shape S; the result is [C, *S].  Gradients
    flow into x and, when ys/xs are tensors, into the coordinates as well.
    """
    if x.ndim != 3:
        raise DimensionError(f"bilinear_gather expects x [C,H,W], got {x.shape}")
    ty = isinstance(ys, Tensor)
    tx = isinstance(xs, Tensor)
    yv = ys.data if ty else np.asarray(ys, dtype=np.float64)
    xv = xs.data if tx else np.asarray(xs, dtype=np.float64)
    if yv.shape != xv.shape:
        raise DimensionError(f"coordinate shapes differ: {yv.shape} vs {xv.shape}")
    c, h, w = x.shape
    s = yv.shape

    iy0 = np.floor(yv).astype(np.int64)
    ix0 = np.floor(xv).astype(np.int64)
    fy = yv - iy0
    fx = xv - ix0
    iy1 = iy0 + 1
    ix1 = ix0 + 1

    flat_img = x.data.reshape(c, h * w)

    def corner(iy, ix):
        valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        idx = np.clip(iy, 0, h - 1) * w + np.clip(ix, 0, w - 1)
        v = flat_img[:, idx.reshape(-1)].reshape((c,) + s)
        v = v * valid  # zero padding outside the canvas
        return v, idx, valid

    v00, i00, m00 = corner(iy0, ix0)
    v01, i01, m01 = corner(iy0, ix1)
    v10, i10, m10 = corner(iy1, ix0)
    v11, i11, m11 = corner(iy1, ix1)

    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    out = Tensor(w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11)

    def backward_fn(g):
        gx_flat = np.zeros(c * h * w)
        chan_base = (np.arange(c) * (h * w))[:, None]
        for wgt, idx, msk in ((w00, i00, m00), (w01, i01, m01),
                              (w10, i10, m10), (w11, i11, m11)):
            contrib = (g * (wgt * msk)).reshape(c, -1)
            keys = chan_base + idx.reshape(-1)[None, :]
            gx_flat += np.bincount(keys.reshape(-1), weights=contrib.reshape(-1),
                                   minlength=c * h * w)
        grads = [gx_flat.reshape(c, h, w)]
        if ty:
            gy = np.sum(g * ((v10 - v00) * (1.0 - fx) + (v11 - v01) * fx), axis=0)
            grads.append(gy)
        if tx:
            gxs = np.sum(g * ((v01 - v00) * (1.0 - fy) + (v11 - v10) * fy), axis=0)
            grads.append(gxs)
        return grads

    inputs = (x,) + tuple(t for t, used in ((ys, ty), (xs, tx)) if used)
    return _record(out, inputs, backward_fn)


def bilinear_sample(x: Tensor, py: float, px: float) -> Tensor:
    """Single-point convenience wrapper around bilinear_gather; returns [C]."""
    out = bilinear_gather(x, np.array([py]), np.array([px]))
    return reshape(out, (x.shape[0],))


# ---------------------------------------------------------------- pooling etc.

def global_avg_pool(x: Tensor) -> Tensor:
    """[C, H, W] -> [C] spatial mean."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)))

    def backward_fn(g):
        return (np.broadcast_to(g[:, None, None] / (h * w), x.shape).copy(),)

    return _record(out, (x,), backward_fn)


def index_select(table: Tensor, indices) -> Tensor:
    """Gather rows of a [T, E] table; duplicate rows accumulate gradient."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise UsageError("index_select needs integer indices")
    out = Tensor(table.data[idx])

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), backward_fn)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Integer-factor nearest-neighbour upsampling of [C, H, W]."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_nearest expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    f = int(factor)
    out = Tensor(np.repeat(np.repeat(x.data, f, axis=1), f, axis=2))

    def backward_fn(g):
        return (g.reshape(c, h, f, w, f).sum(axis=(2, 4)),)

    return _record(out, (x,), backward_fn)


_BILINEAR_MATS: dict = {}


def _upsample_matrix(n: int, f: int) -> np.ndarray:
    """Dense [n*f, n] interpolation matrix (half-pixel centres, clamped edges)."""
    key = (n, f)
    mat = _BILINEAR_MATS.get(key)
    if mat is None:
        out_n = n * f
        src = (np.arange(out_n) + 0.5) / f - 0.5
        src = np.clip(src, 0.0, n - 1.0)
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        i1 = np.minimum(i0 + 1, n - 1)
        mat = np.zeros((out_n, n))
        mat[np.arange(out_n), i0] += 1.0 - frac
        mat[np.arange(out_n), i1] += frac
        _BILINEAR_MATS[key] = mat
    return mat


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling of [C, H, W]."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_bilinear expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    f = int(factor)
    wy = _upsample_matrix(h, f)
    wx = _upsample_matrix(w, f)
    out = Tensor(np.einsum("oh,chw,pw->cop", wy, x.data, wx, optimize=True))

    def backward_fn(g):
        return (np.einsum("oh,cop,pw->chw", wy, g, wx, optimize=True),)

    return _record(out, (x,), backward_fn)
