"""Complex-valued tensors with reverse-mode automatic differentiation.

Values are numpy arrays in double precision (float64 / complex128). Every
operation that touches a gradient-requiring tensor appends one entry to a
per-thread tape; ``backward`` replays the tape in reverse execution order
and clears it. Losses must be real scalars.

Gradient convention: for a real loss L and a complex intermediate z, the
stored adjoint is dL/dRe(z) + 1j * dL/dIm(z), i.e. complex values are just
a packaging of two real partials. Trainable parameters are expected to be
real tensors (complex signals are assembled from real/imaginary parts via
``to_complex``), so ``grad`` on a parameter is the plain real derivative.
"""

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "ContractError", "as_tensor", "no_grad",
    "backward", "zero_grad", "tape_size", "clear_tape",
    "add", "sub", "mul", "div", "matmul", "conj", "abs2", "exp_j_theta",
    "relu", "tanh", "exp", "log", "sqrt", "real", "imag", "to_complex",
    "reshape", "transpose", "tsum", "tmean", "concat", "take_rows",
    "getitem", "log_softmax", "conv2d", "avg_pool2", "finite_diff_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. backward on a complex scalar)."""


_tls = threading.local()


def _state():
    if not hasattr(_tls, "tape"):
        _tls.tape = []
        _tls.enabled = True
    return _tls


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation mode)."""
    st = _state()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


def tape_size():
    return len(_state().tape)


def clear_tape():
    _state().tape.clear()


def _promote(arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    """Shaped array of double-precision real or complex values.

    Attributes:
        data: numpy array (float64 or complex128).
        requires_grad: participate in gradient computation.
        grad: accumulated gradient, same shape as data; real tensors carry
            real gradients. None until a backward pass reaches this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = _promote(data)
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
    def is_complex(self):
        return np.iscomplexobj(self.data)

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return self.data.reshape(-1)[0].item() if self.data.size == 1 else self.data

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, complex={self.is_complex}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, backward_fn):
    st = _state()
    if st.enabled and out.requires_grad:
        st.tape.append((out, backward_fn))
    return out


def _needs(*tensors):
    return _state().enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(grad, shape):
    """Sum ``grad`` over axes that were broadcast to reach its shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t, g):
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), t.data.shape)
    if not t.is_complex and np.iscomplexobj(g):
        g = g.real
    g = g.reshape(t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=_needs(a, b))

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, requires_grad=_needs(a, b))

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, bw)


def mul(a, b):
    """Entrywise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=_needs(a, b))
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, np.conj(bd) * g)
        _accum(b, np.conj(ad) * g)

    return _record(out, bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, requires_grad=_needs(a, b))
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, g / np.conj(bd))
        _accum(b, -np.conj(ad / (bd * bd)) * g)

    return _record(out, bw)


def matmul(a, b):
    """Matrix product following numpy ``@`` semantics (batch dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul requires at least 1-D operands")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    # lift 1-D operands so the core path only sees stacks of matrices
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    out = Tensor(a.data @ b.data, requires_grad=_needs(a, b))
    ad, bd = a.data, b.data

    def bw(g):
        g = np.asarray(g)
        if a.requires_grad:
            _accum(a, g @ np.conj(np.swapaxes(bd, -1, -2)))
        if b.requires_grad:
            _accum(b, np.conj(np.swapaxes(ad, -1, -2)) @ g)

    return _record(out, bw)


def conj(a):
    a = as_tensor(a)
    out = Tensor(np.conj(a.data), requires_grad=_needs(a))

    def bw(g):
        _accum(a, np.conj(g))

    return _record(out, bw)


def abs2(a):
    """Entrywise squared magnitude |z|^2; output is real."""
    a = as_tensor(a)
    out = Tensor((a.data * np.conj(a.data)).real, requires_grad=_needs(a))
    ad = a.data

    def bw(g):
        _accum(a, 2.0 * g * ad)

    return _record(out, bw)


def exp_j_theta(theta):
    """Map real phases to unit-modulus complex responses exp(1j*theta)."""
    theta = as_tensor(theta)
    if theta.is_complex:
        raise TypeError("exp_j_theta expects a real tensor of phases")
    w = np.exp(1j * theta.data)
    out = Tensor(w, requires_grad=_needs(theta))

    def bw(g):
        _accum(theta, (np.conj(w) * g).imag)

    return _record(out, bw)


def _require_real(a, name):
    if a.is_complex:
        raise TypeError(f"{name} applies to real tensors only")


def relu(a):
    a = as_tensor(a)
    _require_real(a, "relu")
    mask = a.data > 0
    out = Tensor(a.data * mask, requires_grad=_needs(a))

    def bw(g):
        _accum(a, g * mask)

    return _record(out, bw)


def tanh(a):
    a = as_tensor(a)
    _require_real(a, "tanh")
    t = np.tanh(a.data)
    out = Tensor(t, requires_grad=_needs(a))

    def bw(g):
        _accum(a, g * (1.0 - t * t))

    return _record(out, bw)


def exp(a):
    a = as_tensor(a)
    _require_real(a, "exp")
    e = np.exp(a.data)
    out = Tensor(e, requires_grad=_needs(a))

    def bw(g):
        _accum(a, g * e)

    return _record(out, bw)


def log(a):
    a = as_tensor(a)
    _require_real(a, "log")
    out = Tensor(np.log(a.data), requires_grad=_needs(a))
    ad = a.data

    def bw(g):
        _accum(a, g / ad)

    return _record(out, bw)


def sqrt(a):
    a = as_tensor(a)
    _require_real(a, "sqrt")
    s = np.sqrt(a.data)
    out = Tensor(s, requires_grad=_needs(a))

    def bw(g):
        _accum(a, g * (0.5 / s))

    return _record(out, bw)


def real(a):
    a = as_tensor(a)
    out = Tensor(a.data.real.copy(), requires_grad=_needs(a))

    def bw(g):
        _accum(a, g if not a.is_complex else g + 0j)

    return _record(out, bw)


def imag(a):
    a = as_tensor(a)
    out = Tensor(a.data.imag.copy(), requires_grad=_needs(a))

    def bw(g):
        _accum(a, 1j * g)

    return _record(out, bw)


def to_complex(re_part, im_part):
    """Assemble a complex tensor from two real tensors."""
    re_part, im_part = as_tensor(re_part), as_tensor(im_part)
    _require_real(re_part, "to_complex")
    _require_real(im_part, "to_complex")
    if re_part.shape != im_part.shape:
        raise ShapeError(f"to_complex parts disagree: {re_part.shape} vs {im_part.shape}")
    out = Tensor(re_part.data + 1j * im_part.data, requires_grad=_needs(re_part, im_part))

    def bw(g):
        _accum(re_part, np.real(g))
        _accum(im_part, np.imag(g))

    return _record(out, bw)


# ---------------------------------------------------------------------------
# shape / reduction primitives
# ---------------------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), requires_grad=_needs(a))
    orig = a.data.shape

    def bw(g):
        _accum(a, np.asarray(g).reshape(orig))

    return _record(out, bw)


def transpose(a, axes=None):
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes), requires_grad=_needs(a))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bw(g):
        _accum(a, np.transpose(g, inv))

    return _record(out, bw)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=_needs(a))
    in_shape = a.data.shape

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % len(in_shape) for ax in axes):
                g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g, in_shape))

    return _record(out, bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 requires_grad=_needs(*tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(np.asarray(g), splits, axis=axis)):
            _accum(t, piece)

    return _record(out, bw)


def getitem(a, key):
    a = as_tensor(a)
    out = Tensor(a.data[key], requires_grad=_needs(a))
    in_shape = a.data.shape

    def bw(g):
        g = np.asarray(g)
        full = np.zeros(in_shape, dtype=np.complex128 if np.iscomplexobj(g) else np.float64)
        full[key] = g
        _accum(a, full)

    return _record(out, bw)


def take_rows(a, idx):
    """Select a[i, idx[i]] for each row i (used for class-index lookup)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or a.ndim != 2:
        raise ShapeError(f"take_rows expects 2-D input and 1-D index, got {a.shape} and {idx.shape}")
    if idx.min() < 0 or idx.max() >= a.shape[1]:
        raise IndexError(f"class index out of range [0, {a.shape[1]}): {idx.min()}..{idx.max()}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx], requires_grad=_needs(a))
    in_shape = a.data.shape
    dtype = a.data.dtype

    def bw(g):
        full = np.zeros(in_shape, dtype=dtype)
        full[rows, idx] = g
        _accum(a, full)

    return _record(out, bw)


def log_softmax(a):
    """Row-wise log-softmax of real 2-D logits."""
    a = as_tensor(a)
    _require_real(a, "log_softmax")
    shift = Tensor(a.data.max(axis=-1, keepdims=True))  # constant offset
    z = sub(a, shift)
    return sub(z, log(tsum(exp(z), axis=-1, keepdims=True)))


# ---------------------------------------------------------------------------
# convolution / pooling (real-valued, batched)
# ---------------------------------------------------------------------------

def _windows(x, k):
    # (B, C, H, W) -> (B, Ho, Wo, C, k, k) view
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5))


def conv2d(x, w, b):
    """Valid cross-correlation of (B,C,H,W) input with (F,C,k,k) kernels plus bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    for t in (x, w, b):
        _require_real(t, "conv2d")
    B, C, H, W = x.shape
    F, Cw, k, _ = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {w.shape}")
    Ho, Wo = H - k + 1, W - k + 1
    cols = _windows(x.data, k).reshape(B * Ho * Wo, C * k * k)
    wmat = w.data.reshape(F, C * k * k)
    out_data = (cols @ wmat.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2) + b.data[None, :, None, None]
    out = Tensor(out_data, requires_grad=_needs(x, w, b))
    xd, wd = x.data, w.data

    def bw(g):
        g = np.asarray(g)
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        if b.requires_grad:
            _accum(b, gmat.sum(axis=0))
        if w.requires_grad:
            _accum(w, (gmat.T @ cols).reshape(F, C, k, k))
        if x.requires_grad:
            # full correlation of the padded output gradient with flipped kernels
            gpad = np.zeros((B, F, Ho + 2 * (k - 1), Wo + 2 * (k - 1)))
            gpad[:, :, k - 1:k - 1 + Ho, k - 1:k - 1 + Wo] = g
            gcols = _windows(gpad, k).reshape(B * H * W, F * k * k)
            wflip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, F * k * k)
            _accum(x, (gcols @ wflip.T).reshape(B, H, W, C).transpose(0, 3, 1, 2))

    return _record(out, bw)


def avg_pool2(x):
    """2x2 average pooling of a (B,C,H,W) tensor; H and W must be even."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {x.shape}")
    pooled = reshape(x, (B, C, H // 2, 2, W // 2, 2))
    return tmean(pooled, axis=(3, 5))


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss):
    """Replay the tape in reverse execution order, filling ``grad`` fields.

    ``loss`` must be a real scalar tensor. The tape is cleared afterwards.
    """
    loss = as_tensor(loss)
    if loss.is_complex:
        raise ContractError("backward requires a real scalar loss, got complex")
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    st = _state()
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(st.tape):
        if out.grad is not None:
            fn(out.grad)
    st.tape.clear()


def zero_grad(params):
    for p in params:
        p.grad = None


def finite_diff_check(loss_fn, param, eps=1e-6):
    """Compare analytic gradients against central finite differences.

    Args:
        loss_fn: zero-argument callable rebuilding the loss from ``param``.
        param: real tensor with requires_grad=True, perturbed in place.
        eps: central-difference step.

    Returns:
        Maximum over coordinates of |analytic - numeric| / (|analytic| + 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if param.is_complex:
        raise TypeError("finite_diff_check perturbs real parameters only")
    if not param.data.flags["C_CONTIGUOUS"]:
        param.data = np.ascontiguousarray(param.data)
    clear_tape()
    param.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = np.zeros_like(param.data) if param.grad is None else np.array(param.grad, dtype=np.float64)

    flat = param.data.reshape(-1)
    numeric = np.zeros(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn().data.reshape(-1)[0])
            flat[i] = orig - eps
            lm = float(loss_fn().data.reshape(-1)[0])
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * eps)

    an = analytic.reshape(-1)
    return float(np.max(np.abs(an - numeric) / (np.abs(an) + 1e-12)))
