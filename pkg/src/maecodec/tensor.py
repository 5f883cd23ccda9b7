"""Dense n-d float tensors with a reverse-mode gradient tape.

Every primitive the codec needs lives here: 2-d (transposed) convolution,
dense affine maps, elementwise nonlinearities, channel-broadcast scale/shift
for NCHW feature maps, per-channel batched matmuls for the entropy model,
reductions, and a finite-difference gradient checker.

Forward evaluation always works; gradients are recorded only while a
GradientTape is active.  Tapes are single use: one forward pass, one
backward pass.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit as _expit

from .exceptions import ContractViolation, NumericDomainError

_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """A dense float array plus a requires_grad flag.

    ``data`` is always a C-contiguous float32/float64 ndarray.  ``grad`` is
    filled in by ``GradientTape.backward`` for tensors that require grad.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

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
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """A view of the same values that does not require grad."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic is routed through the module functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_constant(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


class GradientTape:
    """Ordered record of executed primitives for one forward pass.

    Use as a context manager around the forward computation, then call
    ``backward(loss)`` exactly once.  The tape is confined to the thread
    that opened it.
    """

    def __init__(self):
        self._nodes = []
        self._spent = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradientTape exited out of order")
        stack.pop()
        return False

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(tensor) for every requires_grad tensor.

        Returns a dict keyed by Tensor identity.  Tensors recorded on the
        tape but not reachable from ``loss`` get exact zeros, as does any
        tensor in ``params`` that never appeared on the tape.  Also stores
        the result on each tensor's ``.grad``.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ContractViolation("backward() needs a scalar loss tensor")
        if self._spent:
            raise RuntimeError("GradientTape is single use; record a new forward pass")
        self._spent = True

        flowing = {id(loss): np.ones_like(loss.data)}
        watched = {}
        for node in reversed(self._nodes):
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in watched:
                    watched[id(inp)] = inp
            g = flowing.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gin in zip(node.inputs, node.backward(g)):
                if gin is None or not inp.requires_grad:
                    continue
                have = flowing.get(id(inp))
                flowing[id(inp)] = gin if have is None else have + gin

        result = {}
        for key, t in watched.items():
            g = flowing.get(key)
            result[t] = np.zeros_like(t.data) if g is None else np.ascontiguousarray(g)
        if params is not None:
            for p in params:
                if p not in result:
                    result[p] = np.zeros_like(p.data)
        for t, g in result.items():
            t.grad = g
        return result


def _record(out, inputs, backward):
    stack = _tape_stack()
    out.requires_grad = any(t.requires_grad for t in inputs)
    if stack and out.requires_grad:
        stack[-1]._nodes.append(_Node(out, inputs, backward))
    return out


def _as_constant(value, like=None):
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


# ---------------------------------------------------------------------------
# convolution


def _pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _strided_windows(x, kh, kw, stride):
    # x: (N, C, H, W) -> (N, C, Ho, Wo, kh, kw) view
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_conv_args(stride, padding):
    if not (isinstance(stride, (int, np.integer)) and stride >= 1):
        raise ContractViolation(f"stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, (int, np.integer)) and padding >= 0):
        raise ContractViolation(f"padding must be a nonnegative int, got {padding!r}")


def conv2d(x, kernel, stride=1, padding=0):
    """Strided 2-d cross-correlation of an NCHW batch with an OIKK kernel.

    Output spatial extent per axis is floor((H + 2*pad - K)/stride) + 1.
    """
    _check_conv_args(stride, padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ContractViolation(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    n, ci, h, w = x.shape
    co, ki, kh, kw = kernel.shape
    if ci != ki:
        raise ContractViolation(
            f"conv2d channel mismatch: input has {ci} channels, kernel expects {ki}"
        )
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ContractViolation(
            f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        )

    xp = _pad_hw(x.data, padding)
    win = _strided_windows(xp, kh, kw, stride)
    out_data = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = Tensor(np.ascontiguousarray(out_data.transpose(0, 3, 1, 2)))

    def backward(g):
        gx = None
        if x.requires_grad:
            gx = _conv2d_input_grad(g, kernel.data, x.shape, stride, padding)
        gk = None
        if kernel.requires_grad:
            gwin = _strided_windows(_pad_hw(x.data, padding), kh, kw, stride)
            gk = np.tensordot(g, gwin, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gk

    return _record(out, (x, kernel), backward)


def _scatter_windows(contrib, canvas, stride):
    # contrib: (N, C, H, W, kh, kw); adds each kh*kw tap into the strided canvas
    _, _, h, w, kh, kw = contrib.shape
    for a in range(kh):
        for b in range(kw):
            canvas[:, :, a : a + (h - 1) * stride + 1 : stride,
                   b : b + (w - 1) * stride + 1 : stride] += contrib[..., a, b]
    return canvas


def _conv2d_input_grad(g, kdata, x_shape, stride, padding):
    # adjoint of conv2d with respect to its input
    n, ci, h, w = x_shape
    contrib = np.tensordot(g, kdata, axes=([1], [0]))  # (N, Ho, Wo, Ci, kh, kw)
    contrib = contrib.transpose(0, 3, 1, 2, 4, 5)
    canvas = np.zeros((n, ci, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
    _scatter_windows(contrib, canvas, stride)
    if padding == 0:
        return canvas
    return np.ascontiguousarray(canvas[:, :, padding : padding + h, padding : padding + w])


def conv2d_transpose(x, kernel, stride=1, padding=0, output_padding=None):
    """Transposed 2-d convolution (the adjoint of conv2d as a forward map).

    ``kernel`` has shape (C_in, C_out, K, K).  Output spatial extent is
    (H - 1)*stride - 2*pad + K + output_padding.  The default
    output_padding of stride - 1 makes the op invert conv2d's shape map
    for inputs whose sides are multiples of the stride.
    """
    _check_conv_args(stride, padding)
    if output_padding is None:
        output_padding = stride - 1
    if not 0 <= output_padding < stride:
        raise ContractViolation(
            f"output_padding must be in [0, stride), got {output_padding} with stride {stride}"
        )
    if x.ndim != 4 or kernel.ndim != 4:
        raise ContractViolation(
            f"conv2d_transpose expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    n, ci, h, w = x.shape
    ki, co, kh, kw = kernel.shape
    if ci != ki:
        raise ContractViolation(
            f"conv2d_transpose channel mismatch: input has {ci} channels, kernel expects {ki}"
        )
    th = (h - 1) * stride - 2 * padding + kh + output_padding
    tw = (w - 1) * stride - 2 * padding + kw + output_padding
    if th <= 0 or tw <= 0:
        raise ContractViolation(
            f"conv2d_transpose output extent {th}x{tw} is not positive"
        )

    def forward(xdata, kdata):
        contrib = np.tensordot(xdata, kdata, axes=([1], [0]))  # (N, H, W, Co, kh, kw)
        contrib = contrib.transpose(0, 3, 1, 2, 4, 5)
        canvas = np.zeros(
            (n, co, (h - 1) * stride + kh + output_padding,
             (w - 1) * stride + kw + output_padding),
            dtype=xdata.dtype,
        )
        _scatter_windows(contrib, canvas, stride)
        return np.ascontiguousarray(canvas[:, :, padding : padding + th, padding : padding + tw])

    out = Tensor(forward(x.data, kernel.data))

    def backward(g):
        # re-embed the gradient into canvas coordinates, then gather windows
        canvas = np.zeros(
            (n, co, (h - 1) * stride + kh + output_padding,
             (w - 1) * stride + kw + output_padding),
            dtype=g.dtype,
        )
        canvas[:, :, padding : padding + th, padding : padding + tw] = g
        win = sliding_window_view(canvas, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        gx = None
        if x.requires_grad:
            gx = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        gk = None
        if kernel.requires_grad:
            gk = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gk

    return _record(out, (x, kernel), backward)


# ---------------------------------------------------------------------------
# dense / per-channel linear maps


def affine(x, weight, bias):
    """y = x @ weight + bias for x of shape (B, n), weight (n, m), bias (m,)."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ContractViolation(
            f"affine expects (B,n) x (n,m) + (m,), got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ContractViolation(
            f"affine inner extents disagree: {x.shape} @ {weight.shape} + {bias.shape}"
        )
    out = Tensor(x.data @ weight.data + bias.data)

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, weight, bias), backward)


def channel_matmul(weight, h):
    """Batched per-channel matmul: (C, o, i) @ (C, i, M) -> (C, o, M)."""
    if weight.ndim != 3 or h.ndim != 3 or weight.shape[0] != h.shape[0] \
            or weight.shape[2] != h.shape[1]:
        raise ContractViolation(
            f"channel_matmul shapes disagree: {weight.shape} @ {h.shape}"
        )
    out = Tensor(np.matmul(weight.data, h.data))

    def backward(g):
        gw = np.matmul(g, h.data.transpose(0, 2, 1)) if weight.requires_grad else None
        gh = np.matmul(weight.data.transpose(0, 2, 1), g) if h.requires_grad else None
        return gw, gh

    return _record(out, (weight, h), backward)


def channel_bias(h, bias):
    """Add a (C, o, 1) bias to a (C, o, M) activation."""
    if h.ndim != 3 or bias.shape != (h.shape[0], h.shape[1], 1):
        raise ContractViolation(
            f"channel_bias expects bias {(h.shape[0], h.shape[1], 1)}, got {bias.shape}"
        )
    out = Tensor(h.data + bias.data)

    def backward(g):
        gh = g if h.requires_grad else None
        gb = g.sum(axis=2, keepdims=True) if bias.requires_grad else None
        return gh, gb

    return _record(out, (h, bias), backward)


def tanh_coupling(h, gate):
    """h + tanh(gate) * tanh(h) with gate of shape (C, o, 1).

    Monotone in h as long as tanh(gate) > -1, which always holds.
    """
    if h.ndim != 3 or gate.shape != (h.shape[0], h.shape[1], 1):
        raise ContractViolation(
            f"tanh_coupling expects gate {(h.shape[0], h.shape[1], 1)}, got {gate.shape}"
        )
    th = np.tanh(h.data)
    tg = np.tanh(gate.data)
    out = Tensor(h.data + tg * th)

    def backward(g):
        gh = g * (1.0 + tg * (1.0 - th * th)) if h.requires_grad else None
        gg = None
        if gate.requires_grad:
            gg = (g * th).sum(axis=2, keepdims=True) * (1.0 - tg * tg)
        return gh, gg

    return _record(out, (h, gate), backward)


def channel_scale(x, vec):
    """Multiply an NCHW tensor by a per-channel vector, broadcast over N, H, W."""
    if x.ndim != 4 or vec.ndim != 1 or vec.shape[0] != x.shape[1]:
        raise ContractViolation(
            f"channel_scale needs a length-{x.shape[1]} vector, got shape {vec.shape}"
        )
    v4 = vec.data.reshape(1, -1, 1, 1)
    out = Tensor(x.data * v4)

    def backward(g):
        gx = g * v4 if x.requires_grad else None
        gv = (g * x.data).sum(axis=(0, 2, 3)) if vec.requires_grad else None
        return gx, gv

    return _record(out, (x, vec), backward)


def channel_shift(x, vec):
    """Add a per-channel vector to an NCHW tensor, broadcast over N, H, W."""
    if x.ndim != 4 or vec.ndim != 1 or vec.shape[0] != x.shape[1]:
        raise ContractViolation(
            f"channel_shift needs a length-{x.shape[1]} vector, got shape {vec.shape}"
        )
    out = Tensor(x.data + vec.data.reshape(1, -1, 1, 1))

    def backward(g):
        gx = g if x.requires_grad else None
        gv = g.sum(axis=(0, 2, 3)) if vec.requires_grad else None
        return gx, gv

    return _record(out, (x, vec), backward)


# ---------------------------------------------------------------------------
# elementwise


def _unary(x, fn, dfn):
    out = Tensor(fn(x.data))

    def backward(g):
        return (g * dfn(x.data, out.data) if x.requires_grad else None,)

    return _record(out, (x,), backward)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0), lambda v, o: (v > 0).astype(v.dtype))


def exp(x):
    return _unary(x, np.exp, lambda v, o: o)


def neg(x):
    return _unary(x, np.negative, lambda v, o: np.float64(-1.0).astype(v.dtype))


def square(x):
    return _unary(x, np.square, lambda v, o: 2.0 * v)


def tanh(x):
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o)


def sigmoid(x):
    return _unary(x, _expit, lambda v, o: o * (1.0 - o))


def softplus(x):
    return _unary(x, lambda v: np.logaddexp(0.0, v).astype(v.dtype), lambda v, o: _expit(v))


def _domain_check(data, ok_mask, op_name, requirement):
    if not ok_mask.all():
        idx = tuple(int(i) for i in np.argwhere(~ok_mask)[0])
        raise NumericDomainError(
            f"{op_name} requires {requirement}; violated at element {idx}"
        )


def sqrt(x):
    _domain_check(x.data, x.data > 0, "sqrt", "strictly positive inputs")
    return _unary(x, np.sqrt, lambda v, o: 0.5 / o)


def log2(x):
    _domain_check(x.data, x.data > 0, "log2", "strictly positive inputs")
    inv_ln2 = 1.0 / np.log(2.0)
    return _unary(x, np.log2, lambda v, o: inv_ln2 / v)


def _binary_operands(a, b, op_name):
    if not isinstance(a, Tensor):
        a = _as_constant(a, like=b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = _as_constant(b, like=a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ContractViolation(
            f"{op_name} needs equal shapes or a scalar operand, got {a.shape} and {b.shape}"
        )
    return a, b


def _shrink_to(g, tensor):
    # reduce a full-shape gradient back to a scalar operand's shape
    if g.shape == tensor.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(tensor.shape)


def add(a, b):
    a, b = _binary_operands(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        ga = _shrink_to(g, a) if a.requires_grad else None
        gb = _shrink_to(g, b) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward(g):
        ga = _shrink_to(g, a) if a.requires_grad else None
        gb = _shrink_to(-g, b) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        ga = _shrink_to(g * b.data, a) if a.requires_grad else None
        gb = _shrink_to(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def div(a, b):
    a, b = _binary_operands(a, b, "div")
    _domain_check(b.data, b.data != 0, "div", "a nonzero divisor")
    out = Tensor(a.data / b.data)

    def backward(g):
        ga = _shrink_to(g / b.data, a) if a.requires_grad else None
        gb = _shrink_to(-g * out.data / b.data, b) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    axes = tuple(int(a) for a in axes)
    norm = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ContractViolation(f"axis {a} is out of range for ndim {ndim}")
        norm.append(a % ndim)
    if len(set(norm)) != len(norm):
        raise ContractViolation(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def _reduce(x, axes, mean):
    axes = _normalize_axes(axes, x.ndim)
    out_data = x.data.mean(axis=axes) if mean else x.data.sum(axis=axes)
    out = Tensor(out_data)
    count = 1
    for a in axes:
        count *= x.shape[a]

    def backward(g):
        if not x.requires_grad:
            return (None,)
        shape = list(x.shape)
        for a in axes:
            shape[a] = 1
        g_full = np.broadcast_to(g.reshape(shape), x.shape)
        if mean:
            g_full = g_full / count
        return (np.ascontiguousarray(g_full),)

    return _record(out, (x,), backward)


def reduce_sum(x, axes=None):
    """Exact sum over the named axes (all axes when None)."""
    return _reduce(x, axes, mean=False)


def reduce_mean(x, axes=None):
    """Arithmetic mean over the named axes (all axes when None)."""
    return _reduce(x, axes, mean=True)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ContractViolation(f"cannot reshape {x.shape} to {shape}")
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape) if x.requires_grad else None,)

    return _record(out, (x,), backward)


def transpose(x, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ContractViolation(f"transpose axes {axes} are not a permutation for ndim {x.ndim}")
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)) if x.requires_grad else None,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, inputs, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a scalar Tensor and must be
    deterministic; inputs must sit in the interior of every domain the
    program touches.  Everything is evaluated in double precision.
    Returns max over coordinates of
    |analytic - numeric| / (|analytic| + 1e-8).
    """
    work = [Tensor(t.data.astype(np.float64), requires_grad=t.requires_grad) for t in inputs]
    with GradientTape() as tape:
        loss = fn(*work)
    if loss.size != 1:
        raise ContractViolation("grad_check needs a scalar-valued program")
    grads = tape.backward(loss)

    worst = 0.0
    for t in work:
        if not t.requires_grad:
            continue
        g = grads.get(t)
        analytic = (np.zeros_like(t.data) if g is None else g).reshape(-1)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(*work).item()
            flat[i] = orig - eps
            f_minus = fn(*work).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8)
            worst = max(worst, err)
    return worst
