"""Dense float64 tensors with reverse-mode automatic differentiation.

The whole model stack runs on this module: a ``Tensor`` wraps a numpy array
plus a ``requires_grad`` flag, and every operation optionally records itself
on the innermost active ``Tape``.  ``backward(loss, tape)`` then replays the
tape in reverse and returns a gradient map keyed by tensor.

Conventions:

- float64 everywhere (the build-wide precision choice); gradient checks and
  training share the same dtype.
- tensors are treated as immutable once produced by an op; only leaf
  parameters are updated in place, between passes, by the optimizer.
- every op validates that its output is finite and raises ``NonFiniteError``
  otherwise, so divergence surfaces at the op that produced it.
- conv2d uses the cross-correlation convention (no kernel flip).
- max reductions route gradient to the first maximum in row-major order.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, NonFiniteError

DTYPE = np.float64


class Tensor:
    """N-dimensional numeric array; the universal value of all network math."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor created from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def __getitem__(self, idx) -> "Tensor":
        return index(self, idx)

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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of ops enabling one reverse pass.

    Single-writer: one forward/backward pass owns a tape exclusively.
    When no tape is active, ops run without recording (pure inference).
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out, inputs, vjp):
        self._nodes.append(_Node(out, inputs, vjp))


_ACTIVE: list[Tape] = []


def backward(loss: Tensor, tape: Tape) -> dict:
    """Reverse-topological gradient accumulation from a scalar loss.

    Returns a map {tensor: gradient array} covering every requires_grad
    tensor reachable from the loss; tensors with no path are absent.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = grads.get(node.out)
        if g is None:
            continue
        for t, gt in zip(node.inputs, node.vjp(g)):
            if gt is None or not t.requires_grad:
                continue
            prev = grads.get(t)
            grads[t] = gt if prev is None else prev + gt
    return grads


# ---------------------------------------------------------------------------
# op plumbing


def _finish(name: str, out_data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _ACTIVE and out.requires_grad:
        _ACTIVE[-1]._record(out, inputs, vjp)
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were expanded by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, name: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finish("sub", a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finish("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "div")

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = a.data / b.data
    return _finish("div", out_data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (-g,)

    return _finish("neg", -a.data, (a,), vjp)


def power(a, exponent: float) -> Tensor:
    """Elementwise a**exponent for a scalar exponent."""
    a = _coerce(a)
    p = float(exponent)

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    with np.errstate(invalid="ignore", over="ignore"):
        out_data = a.data ** p
    return _finish("power", out_data, (a,), vjp)


def exp(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)

    def vjp(g):
        return (g * out_data,)

    return _finish("exp", out_data, (a,), vjp)


def log(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (g / a.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)
    return _finish("log", out_data, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes where the input is inside the range."""
    a = _coerce(a)

    def vjp(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _finish("clip", np.clip(a.data, lo, hi), (a,), vjp)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _finish("relu", np.maximum(a.data, 0.0), (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out_data * (1.0 - out_data),)

    return _finish("sigmoid", out_data, (a,), vjp)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-approximation GELU; the derivative is exact for the approximation."""
    a = _coerce(a)
    d = a.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(inner)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner),)

    return _finish("gelu", 0.5 * d * (1.0 + t), (a,), vjp)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction for stability."""
    a = _coerce(a)
    if a.shape[-1] < 1:
        raise DimensionError("softmax_rows needs a non-empty last axis")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _finish("softmax_rows", s, (a,), vjp)


def layer_norm(a, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    a, gamma, beta = _coerce(a), _coerce(gamma), _coerce(beta)
    if eps <= 0:
        raise ContractError("layer_norm eps must be > 0")
    dim = a.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError(
            f"layer_norm affine params must have shape ({dim},), got {gamma.shape} and {beta.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        gg = g * gamma.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _finish("layer_norm", xhat * gamma.data + beta.data, (a, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - tensor namespace
    a = _coerce(a)

    def vjp(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _finish("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out_data.size, 1)

    def vjp(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _finish("mean", out_data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} (size {a.size}) into {shape}") from None

    def vjp(g):
        return (g.reshape(a.shape),)

    return _finish("reshape", out_data, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _finish("transpose", a.data.transpose(axes), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_coerce(t) for t in tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _finish("concat", out_data, tensors, vjp)


def broadcast_to(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    try:
        out_data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from None

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _finish("broadcast_to", out_data, (a,), vjp)


def index(a, idx) -> Tensor:
    """Basic (slice/int) indexing; gradient scatters back into the source shape."""
    a = _coerce(a)

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        return (buf,)

    return _finish("index", a.data[idx], (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style stacked (batched) broadcasting."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions disagree for {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _finish("matmul", a.data @ b.data, (a, b), vjp)


# ---------------------------------------------------------------------------
# spatial ops (NCHW layout)


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, kernel, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding.

    x: [N, C, H, W]; kernel: [F, C, kh, kw]; bias: [F] -> [N, F, H', W']
    with H' = (H + 2*pad - kh)//stride + 1 (same for W').
    """
    x, kernel, bias = _coerce(x), _coerce(kernel), _coerce(bias)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d needs 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d: input channels {x.shape} do not match kernel {kernel.shape}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(
            f"conv2d: kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # windows: [N, C, H', W', kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_data = np.einsum("nchwij,fcij->nfhw", win, kernel.data, optimize=True)
    out_data = out_data + bias.data[None, :, None, None]
    oh, ow = out_data.shape[2], out_data.shape[3]

    def vjp(g):
        gb = g.sum(axis=(0, 2, 3))
        gk = np.einsum("nfhw,nchwij->fcij", g, win, optimize=True)
        gwin = np.einsum("nfhw,fcij->nchwij", g, kernel.data, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gwin[:, :, :, :, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        return gx, gk, gb

    return _finish("conv2d", out_data, (x, kernel, bias), vjp)


def max_pool2d(x, kernel: int, stride: int, pad: int = 0) -> Tensor:
    """Spatial max pooling; gradient goes to the first max in row-major order."""
    x = _coerce(x)
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d needs a 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if kernel > h + 2 * pad or kernel > w + 2 * pad:
        raise DimensionError(f"max_pool2d: window {kernel} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        ki, kj = np.divmod(idx, kernel)
        ii = np.arange(oh)[None, None, :, None] * stride + ki
        jj = np.arange(ow)[None, None, None, :] * stride + kj
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (nn, cc, ii, jj), g)
        return (gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp,)

    return _finish("max_pool2d", out_data, (x,), vjp)


def global_avg_pool(x) -> Tensor:
    """Per-channel spatial mean: [N, C, H, W] -> [N, C]."""
    x = _coerce(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool needs a 4-d input, got {x.shape}")
    n, c, h, w = x.shape

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape),)

    return _finish("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), vjp)


def global_max_pool(x) -> Tensor:
    """Per-channel spatial max: [N, C, H, W] -> [N, C]; ties to first position."""
    x = _coerce(x)
    if x.ndim != 4:
        raise DimensionError(f"global_max_pool needs a 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        buf = np.zeros((n, c, h * w))
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        return (buf.reshape(x.shape),)

    return _finish("global_max_pool", out_data, (x,), vjp)


# ---------------------------------------------------------------------------
# constructors


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
