"""Dense float tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradient recording is enabled
appends a node to the calling thread's current :class:`Tape`.  Calling
:func:`backward` on a scalar result replays that tape in reverse execution
order, populates ``.grad`` on every grad-enabled tensor reached, and then
retires the tape so no node survives into the next training step.

Only scalar broadcasting is supported: binary elementwise ops require equal
shapes, or a Python number on one side.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "GradCheckReport", "RunningStats",
    "tensor_from", "zeros", "ones", "randn", "as_tensor",
    "add", "sub", "mul", "div", "neg", "scalar_add", "scalar_mul",
    "relu", "sigmoid", "exp", "log", "clamp", "reduce_sum", "reduce_mean",
    "conv2d", "conv_transpose2d", "maxpool2d", "avgpool2d", "batchnorm2d",
    "backward", "grad_check", "no_grad", "default_dtype", "current_tape",
    "reset_tape", "record_op", "is_grad_enabled",
]


# ---------------------------------------------------------------------------
# Thread-local recording state
# ---------------------------------------------------------------------------

class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


@dataclass
class _Node:
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _state() -> threading.local:
    if not hasattr(_local, "tape"):
        _local.tape = Tape()
        _local.grad_enabled = True
        _local.dtype = np.dtype(np.float32)
    return _local


def current_tape() -> Tape:
    return _state().tape


def reset_tape() -> Tape:
    """Discard the current tape (without running it) and start a fresh one."""
    st = _state()
    st.tape.clear()
    st.tape.consumed = True
    st.tape = Tape()
    return st.tape


def is_grad_enabled() -> bool:
    return _state().grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the enclosed block (inference, finite differences)."""
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the float type used for newly created tensors.

    The library works in float32; gradient checking switches to float64 so
    that central differences are not swamped by roundoff.
    """
    st = _state()
    prev = st.dtype
    st.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        st.dtype = prev


def _dtype() -> np.dtype:
    return _state().dtype


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """A dense N-d float array that can take part in gradient recording.

    Parameters
    ----------
    data : array_like
        Values; converted to the current default float type (float32).
    requires_grad : bool
        Mark the tensor as a leaf whose gradient should be populated.
    name : str, optional
        Label used in gradient-check reports and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Tape | None = None

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
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return reduce_sum(self)

    def mean(self) -> "Tensor":
        return reduce_mean(self)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else scalar_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else scalar_add(self, -other)

    def __rsub__(self, other):
        return scalar_add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scalar_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scalar_mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return div(as_tensor(np.full(self.shape, other)), self)

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record_op(data: np.ndarray, inputs: Sequence[Tensor],
              backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward_fn`` receives the output gradient and returns one gradient (or
    None) per input.  Exposed so new ops can be added outside this module.
    """
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        tape = current_tape()
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _as_shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative dimension in shape {shape}")
    return shape


def tensor_from(shape, values, requires_grad: bool = False) -> Tensor:
    shape = _as_shape(shape)
    flat = np.asarray(values, dtype=_dtype()).ravel()
    if flat.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"shape {shape} needs {int(np.prod(shape))} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_as_shape(shape)), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(_as_shape(shape)), requires_grad=requires_grad)


def randn(shape, seed: int, requires_grad: bool = False) -> Tensor:
    """Standard-normal tensor, deterministic per ``(shape, seed)``."""
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    return Tensor(rng.standard_normal(_as_shape(shape)), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Elementwise and reductions
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return record_op(out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a: Tensor) -> Tensor:
    return record_op(-a.data, (a,), lambda g: (-g,))


def scalar_add(a: Tensor, c: float) -> Tensor:
    return record_op(a.data + c, (a,), lambda g: (g,))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return record_op(a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, saturating at the representable values nearest 0 and 1.

    Outputs therefore stay strictly inside (0, 1) even for large logits.
    """
    dt = x.data.dtype
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = np.clip(out, np.finfo(dt).tiny, np.nextafter(dt.type(1), dt.type(0))).astype(dt)
    return record_op(out, (x,), lambda g: (g * out * (1 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of non-positive value; clamp the input first")
    xd = x.data
    return record_op(np.log(xd), (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ValueError(f"clamp bounds inverted: {lo} > {hi}")
    inside = (x.data >= lo) & (x.data <= hi)
    return record_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return record_op(np.sum(x.data, dtype=x.data.dtype), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, max(x.size, 1)
    return record_op(np.sum(x.data, dtype=x.data.dtype) / n, (x,),
                     lambda g: (np.broadcast_to(g / n, shape).copy(),))


# ---------------------------------------------------------------------------
# Convolutions (NCHW)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
            ho: int, wo: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1: stride, : stride * (wo - 1) + 1: stride]
    # B, C, Ho, Wo, kh, kw -> (B*Ho*Wo, C*kh*kw)
    b, c = x.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int,
            stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = x_shape
    cols = cols.reshape(b, ho, wo, c, kh, kw)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i: i + stride * (ho - 1) + 1: stride,
               j: j + stride * (wo - 1) + 1: stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        return xp[:, :, padding: padding + h, padding: padding + w]
    return xp


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    b, _, h, wd = x.shape
    o, c, kh, kw = w.shape
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(wd, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding, ho, wo)
    out = cols @ w.reshape(o, c * kh * kw).T
    return out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2), cols


def _conv_grad_input(gout: np.ndarray, w: np.ndarray, x_shape, stride: int, padding: int):
    b, o, ho, wo = gout.shape
    _, c, kh, kw = w.shape
    gmat = gout.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
    cols = gmat @ w.reshape(o, c * kh * kw)
    return _col2im(cols, x_shape, kh, kw, stride, padding, ho, wo)


def _conv_grad_weight(cols: np.ndarray, gout: np.ndarray, w_shape):
    o = gout.shape[1]
    gmat = gout.transpose(0, 2, 3, 1).reshape(-1, o)
    return (gmat.T @ cols).reshape(w_shape)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is B×Cin×H×W, ``weight`` is Cout×Cin×kH×kW and ``bias`` (optional)
    has length Cout.  Output spatial size is ``(H + 2p - kH) // stride + 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride/padding {stride}/{padding}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    kh, kw = weight.shape[2:]
    ho = _conv_out(x.shape[2], kh, stride, padding)
    wo = _conv_out(x.shape[3], kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: output size {ho}x{wo} is not positive")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({weight.shape[0]},)")

    out, cols = _conv_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    x_shape, wd = x.shape, weight.data

    def _back(g):
        gx = _conv_grad_input(g, wd, x_shape, stride, padding) if x.requires_grad else None
        gw = _conv_grad_weight(cols, g, wd.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record_op(out, inputs, _back)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` in its input.

    ``weight`` is Cin×Cout×kH×kW.  Output size is
    ``(H - 1) * stride - 2 * padding + kH + output_padding``; kernel 3 with
    padding 1 and output_padding 1 (or kernel 2, padding 0) doubles H at
    stride 2.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv_transpose2d expects 4-d input and weight")
    if stride not in (1, 2):
        raise ValueError(f"conv_transpose2d supports stride 1 or 2, got {stride}")
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must be < stride, got {output_padding}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv_transpose2d: input has {x.shape[1]} channels, weight expects {weight.shape[0]}")
    b, _, h, w = x.shape
    cout, kh, kw = weight.shape[1], weight.shape[2], weight.shape[3]
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv_transpose2d: output size {ho}x{wo} is not positive")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")

    wd = weight.data
    out_shape = (b, cout, ho, wo)
    out = _conv_grad_input(x.data, wd, out_shape, stride, padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    xd = x.data

    def _back(g):
        gx = gw = None
        if x.requires_grad or weight.requires_grad:
            gx, gcols = _conv_forward(g, wd, stride, padding)
            if weight.requires_grad:
                gw = _conv_grad_weight(gcols, xd, wd.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record_op(out, inputs, _back)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def _pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.reshape(*win.shape[:4], window * window)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling.  Inputs whose extent does not tile are padded with -inf
    at the bottom/right; gradient goes to the first maximal element of each
    window in row-major order."""
    if x.ndim != 4:
        raise ValueError("maxpool2d expects a 4-d input")
    h, w = x.shape[2:]
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    ho = -(-(h - window) // stride) + 1
    wo = -(-(w - window) // stride) + 1
    ph, pw = (ho - 1) * stride + window - h, (wo - 1) * stride + window - w
    xd = x.data
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    win = _pool_windows(xd, window, stride)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    padded_shape = xd.shape

    def _back(g):
        gx = np.zeros(padded_shape, dtype=g.dtype)
        for q in range(window * window):
            i, j = divmod(q, window)
            gx[:, :, i: i + stride * (ho - 1) + 1: stride,
               j: j + stride * (wo - 1) + 1: stride] += np.where(arg == q, g, 0)
        return (gx[:, :, :h, :w],)

    return record_op(out, (x,), _back)


def avgpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Average pooling over windows that lie fully inside the input."""
    if x.ndim != 4:
        raise ValueError("avgpool2d expects a 4-d input")
    h, w = x.shape[2:]
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = _pool_windows(x.data, window, stride).mean(axis=-1)
    x_shape, k2 = x.shape, window * window

    def _back(g):
        gx = np.zeros(x_shape, dtype=g.dtype)
        share = g / k2
        for i in range(window):
            for j in range(window):
                gx[:, :, i: i + stride * (ho - 1) + 1: stride,
                   j: j + stride * (wo - 1) + 1: stride] += share
        return (gx,)

    return record_op(out, (x,), _back)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batchnorm in eval mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, np.float32), np.ones(channels, np.float32), momentum)


BN_EPS = 1e-5


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
                mode: str = "train") -> Tensor:
    """Per-channel normalization of a B×C×H×W tensor.

    Train mode normalizes with biased batch statistics and folds the batch
    mean and unbiased variance into ``stats`` with its momentum.  Eval mode
    uses ``stats`` and leaves it untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4:
        raise ValueError("batchnorm2d expects a 4-d input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or stats.mean.shape != (c,):
        raise ValueError(f"batchnorm2d: {c} channels but gamma {gamma.shape}, beta {beta.shape}, "
                         f"stats {stats.mean.shape}")
    xd = x.data
    gd = gamma.data[None, :, None, None]
    axes = (0, 2, 3)
    if mode == "train":
        n = xd.size // c
        mu = xd.mean(axis=axes, keepdims=True)
        var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (xd - mu) * inv_std
        m = stats.momentum
        unbiased = var.ravel() * (n / max(n - 1, 1))
        stats.mean = ((1 - m) * stats.mean + m * mu.ravel()).astype(stats.mean.dtype)
        stats.var = ((1 - m) * stats.var + m * unbiased).astype(stats.var.dtype)

        def _back(g):
            gb = g.sum(axis=axes)
            gg = (g * xhat).sum(axis=axes)
            dxhat = g * gd
            gx = inv_std / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            return gx, gg, gb
    else:
        inv_std = (1.0 / np.sqrt(stats.var + BN_EPS))[None, :, None, None].astype(xd.dtype)
        xhat = (xd - stats.mean[None, :, None, None]) * inv_std

        def _back(g):
            return g * gd * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gd + beta.data[None, :, None, None]
    return record_op(out, (x, gamma, beta), _back)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every grad-enabled tensor the scalar ``loss`` depends on.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    The tape that recorded ``loss`` is consumed and replaced by a fresh one.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss._tape is None:
        if not loss.requires_grad:
            raise ValueError("loss was not produced by recorded operations")
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = loss._tape
    if tape.consumed:
        raise RuntimeError("backward called on a tape that was already consumed")

    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._tape is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                pending[key] = gi if key not in pending else pending[key] + gi

    st = _state()
    tape.clear()
    tape.consumed = True
    if st.tape is tape:
        st.tape = Tape()


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    epsilon: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _scalar_value(fn: Callable[[], Tensor]) -> float:
    with no_grad():
        val = fn()
    v = float(np.asarray(val.data).reshape(()))
    if not np.isfinite(v):
        raise FloatingPointError(f"function value is not finite: {v}")
    return v


def grad_check(fn: Callable[[], Tensor], params: Mapping[str, Tensor] | Sequence[Tensor],
               epsilon: float = 1e-3, tolerance: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``fn`` is called with no arguments and must rebuild its graph from the
    current values of ``params``.  Evaluation happens in float64; parameter
    data is restored afterwards.  Relative error per element is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not isinstance(params, Mapping):
        params = {(p.name or f"p{i}"): p for i, p in enumerate(params)}
    saved = {k: (p.data, p.grad, p.requires_grad) for k, p in params.items()}
    errors: dict[str, float] = {}
    try:
        with default_dtype(np.float64):
            for p in params.values():
                p.data = p.data.astype(np.float64)
                p.grad = None
                p.requires_grad = True
            reset_tape()
            loss = fn()
            if not np.all(np.isfinite(loss.data)):
                raise FloatingPointError("function value is not finite")
            backward(loss)
            for key, p in params.items():
                analytic = np.zeros_like(p.data) if p.grad is None else p.grad
                numeric = np.empty_like(p.data)
                flat = p.data.reshape(-1)
                nflat = numeric.reshape(-1)
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + epsilon
                    f_plus = _scalar_value(fn)
                    flat[idx] = orig - epsilon
                    f_minus = _scalar_value(fn)
                    flat[idx] = orig
                    nflat[idx] = (f_plus - f_minus) / (2 * epsilon)
                denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
                rel = np.abs(analytic - numeric) / denom
                errors[key] = float(rel.max()) if rel.size else 0.0
    finally:
        for key, p in params.items():
            p.data, p.grad, p.requires_grad = saved[key]
        reset_tape()
    return GradCheckReport(errors, epsilon, tolerance)
