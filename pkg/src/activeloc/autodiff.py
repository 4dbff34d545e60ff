"""A small reverse-mode automatic differentiation engine on numpy arrays.

Every primitive computes its forward value eagerly and, when any input needs a
gradient, records a closure mapping the output gradient to input gradients.
:func:`backward` sorts the recorded graph topologically (the tape) and runs
the closures in reverse. All arithmetic is float64.

Broadcasting is deliberately limited to adding a 1-D bias over the last axis;
anything else has to be reshaped explicitly.
"""

import contextlib
import math

import numpy as np
from scipy.special import erf as _erf

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording the graph."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, grad_fn, op):
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = grad_fn
    return out


def _shape_fail(op, *tensors):
    shapes = " vs ".join(str(t.shape) for t in tensors)
    raise ShapeError(f"{op}: incompatible shapes {shapes}")


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already called on this graph; rebuild it first")
    if not loss.requires_grad:
        loss._consumed = True
        return

    order, seen, on_stack = [], set(), set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            on_stack.discard(id(node))
            order.append(node)
            continue
        if id(node) in seen:
            assert id(node) not in on_stack, "cycle in autodiff graph"
            continue
        seen.add(id(node))
        on_stack.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for node in order:
        node._consumed = True
        if node._parents:
            node._parents = ()
            node._backward = None


# ---------------------------------------------------------------- elementwise

def _binary_prep(op, a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return a, b, None
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return a, b, "bias_b"
    if a.data.ndim == 1 and b.data.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return a, b, "bias_a"
    if a.data.ndim == 0 or b.data.ndim == 0:
        return a, b, "scalar"
    _shape_fail(op, a, b)


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.sum(g)
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a, b):
    a, b, _ = _binary_prep("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a, b):
    a, b, _ = _binary_prep("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape)), "sub")


def mul(a, b):
    a, b, _ = _binary_prep("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
                 "mul")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _make(s, (a,), lambda g: (g * 0.5 / s,), "sqrt")


_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)


def erf(a):
    a = as_tensor(a)
    return _make(_erf(a.data), (a,),
                 lambda g: (g * _TWO_OVER_SQRTPI * np.exp(-a.data * a.data),), "erf")


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _shape_fail("minimum", a, b)
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a), "minimum")


# ------------------------------------------------------------- linear algebra

def matmul(a, b):
    """2-D matrix product, or a batched product of two 3-D stacks."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (a.data.ndim == 2 and b.data.ndim == 2) or (
        a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] == b.shape[0])
    if not ok or a.shape[-1] != b.shape[-2]:
        _shape_fail("matmul", a, b)
    tr = (lambda m: m.T) if a.data.ndim == 2 else (lambda m: np.swapaxes(m, -1, -2))
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ tr(b.data), tr(a.data) @ g), "matmul")


def affine(x, W, b):
    """``x @ W + b`` with ``x`` of shape (batch, in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        _shape_fail("affine", x, W, b)
    return _make(x.data @ W.data + b.data, (x, W, b),
                 lambda g: (g @ W.data.T, x.data.T @ g, g.sum(axis=0)), "affine")


def transpose(a):
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.data.ndim < 2:
        _shape_fail("transpose", a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),),
                 "transpose")


def softmax(a):
    """Softmax along the last axis (rows of a matrix)."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), grad, "softmax")


# -------------------------------------------------------------- convolution

def _pad_amount(k, padding):
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return (k - 1) // 2, k // 2
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


def conv2d(x, w, b, padding="valid"):
    """Stride-1 cross-correlation of ``x`` (N, C, H, W) with ``w`` (O, C, kh, kw)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if (x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]
            or b.shape != (w.shape[0],)):
        _shape_fail("conv2d", x, w, b)
    kh, kw = w.shape[2:]
    (pt, pb), (pl, pr) = _pad_amount(kh, padding), _pad_amount(kw, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        _shape_fail("conv2d", x, w, b)
    N, C = x.shape[:2]
    O = w.shape[0]
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    # im2col: rows (n, h, w), columns (c, i, j)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, C * kh * kw)
    out = (cols @ wmat.T + b.data).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    H, W = x.shape[2:]

    def grad(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = gmat.sum(axis=0)
        if not x.requires_grad:
            return None, gw, gb
        gcols = (gmat @ wmat).reshape(N, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + Ho, j:j + Wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gxp[:, :, pt:pt + H, pl:pl + W], gw, gb

    return _make(out, (x, w, b), grad, "conv2d")


# ------------------------------------------------------------------ shaping

def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a):
    """Collapse all but the leading axis."""
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        _shape_fail("concat", *tensors)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def gather_rows(a, idx):
    """Select rows ``a[idx]``; repeated indices accumulate their gradients."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=int)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def grad(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), grad, "gather_rows")


def reduce_sum(a, axis=None):
    a = as_tensor(a)

    def grad(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis), (a,), grad, "reduce_sum")


def reduce_mean(a, axis=None):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / n)


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_log_prob(mean, log_std, sample):
    """Diagonal Gaussian log-density summed over the last axis.

    ``mean`` is (batch, d); ``log_std`` is (d,) or (batch, d); ``sample`` is a
    constant of the same shape as ``mean``.
    """
    mean, log_std = as_tensor(mean), as_tensor(log_std)
    a = np.asarray(sample.data if isinstance(sample, Tensor) else sample, dtype=np.float64)
    if a.shape != mean.shape or log_std.shape[-1] != mean.shape[-1]:
        _shape_fail("gaussian_log_prob", mean, log_std, as_tensor(a))
    inv = np.exp(-log_std.data)
    r = (a - mean.data) * inv
    val = np.sum(-0.5 * r * r - log_std.data - _HALF_LOG_2PI, axis=-1)

    def grad(g):
        g = g[..., None]
        g_mean = g * r * inv
        g_ls = g * (r * r - 1.0)
        return g_mean, _reduce_to(g_ls, log_std.shape)

    return _make(val, (mean, log_std), grad, "gaussian_log_prob")


# ----------------------------------------------------------- gradient check

def numerical_grad(f, arrays, h=1e-4):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(*arrays)
            a[i] = old - h
            fm = f(*arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def analytic_grad(build, arrays):
    """Gradients of scalar ``build(*tensors)`` from reverse mode."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    loss = build(*leaves)
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(build, arrays, h=1e-4):
    """Largest relative error between reverse-mode and central-difference gradients."""
    def f(*xs):
        with no_grad():
            return float(np.sum(build(*[Tensor(x) for x in xs]).data))

    ana = analytic_grad(build, arrays)
    num = numerical_grad(f, arrays, h)
    return max(relative_error(a, n) for a, n in zip(ana, num))
