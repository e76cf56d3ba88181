"""Dense float64 tensors with tape-based reverse-mode differentiation.

Just enough of an array engine for the counting pipeline: elementwise
arithmetic, matmul, softmax, 2-D convolution, bilinear upsampling,
sum-pooling and concatenation, each with an exact gradient rule.  A
:class:`GradTape` records executed operations in order; replaying it
backward from a scalar loss populates ``.grad`` on every reachable tensor,
accumulating additively when a tensor is used more than once.

Everything is float64.  Speed is a non-goal; gradient-check headroom is.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """Dense n-d array (channel-major for rasters) with optional gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the actual rules live in the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# gradient tape

class GradTape:
    """Ordered record of executed operations for one forward pass.

    Creation order is a topological order of the (feed-forward) graph, so
    replaying the records in reverse propagates gradients correctly.  The
    tape is cleared after :meth:`backward`; build a fresh graph per pass.
    """

    def __init__(self):
        self._records = []  # (out, pull) pairs; pull(gout) accumulates into parents

    def __len__(self):
        return len(self._records)

    def clear(self):
        self._records.clear()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss is not connected to any recorded operation")
        loss.grad = np.ones_like(loss.data)
        for out, pull in reversed(self._records):
            if out.grad is not None:
                pull(out.grad)
        self.clear()


_TAPE_STACK = [GradTape()]
_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, exc_type, exc, tb):
        _GRAD_ENABLED.pop()
        return False


def backward(loss):
    """Run reverse mode from ``loss`` on the active tape."""
    _TAPE_STACK[-1].backward(loss)


def _accum(t, g):
    # rebinding only, never in-place: grad arrays may be shared with a pull's
    # local buffers
    if t.grad is None:
        t.grad = np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _make(data, parents, pull):
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)  # numpy collapses 0-d results to scalars
    out.grad = None
    out.requires_grad = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
    if out.requires_grad:
        _TAPE_STACK[-1]._records.append((out, pull))
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b):
    def pull(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return _make(a.data + b.data, (a, b), pull)


def sub(a, b):
    def pull(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))
    return _make(a.data - b.data, (a, b), pull)


def mul(a, b):
    def pull(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(a.data * b.data, (a, b), pull)


def div(a, b):
    def pull(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make(a.data / b.data, (a, b), pull)


def neg(a):
    def pull(g):
        _accum(a, -g)
    return _make(-a.data, (a,), pull)


def sqrt(a):
    y = np.sqrt(a.data)

    def pull(g):
        _accum(a, g / (2.0 * y))
    return _make(y, (a,), pull)


def maximum(a, c):
    """Elementwise max against a constant; gradient flows where a >= c."""
    c = float(c)
    mask = a.data >= c

    def pull(g):
        _accum(a, g * mask)
    return _make(np.maximum(a.data, c), (a,), pull)


def silu(a):
    """x * sigmoid(x): the smooth nonlinearity between encoder stages."""
    x = a.data
    e = np.exp(-np.abs(x))  # stable for both signs
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    y = x * s

    def pull(g):
        _accum(a, g * (s * (1.0 + x * (1.0 - s))))
    return _make(y, (a,), pull)


# ---------------------------------------------------------------------------
# reductions and reshaping

def tsum(a):
    def pull(g):
        _accum(a, np.full_like(a.data, float(g)))
    return _make(np.asarray(a.data.sum()), (a,), pull)


def mean(a):
    n = a.data.size

    def pull(g):
        _accum(a, np.full_like(a.data, float(g) / n))
    return _make(np.asarray(a.data.mean()), (a,), pull)


def sum_axis(a, axis, keepdims=False):
    def pull(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), pull)


def reshape(a, shape):
    def pull(g):
        _accum(a, g.reshape(a.data.shape))
    return _make(a.data.reshape(shape), (a,), pull)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def pull(g):
        _accum(a, g.T)
    return _make(a.data.T.copy(), (a,), pull)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def pull(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accum(a, buf)
    return _make(a.data[idx].copy(), (a,), pull)


def concat(ts, axis):
    """Concatenate along ``axis``; all other extents must match."""
    if len(ts) == 0:
        raise ShapeError("concat of zero tensors")
    ref = ts[0].data.shape
    for t in ts[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(
            s[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat shape mismatch off axis {axis}: {ref} vs {s}")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])
    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), pull)


# ---------------------------------------------------------------------------
# linear algebra and softmax

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects matrices")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )

    def pull(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return _make(a.data @ b.data, (a, b), pull)


def softmax_axis(a, axis):
    """Softmax along ``axis`` with per-slice max subtraction for stability."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def pull(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _make(y, (a,), pull)


# ---------------------------------------------------------------------------
# spatial ops

def conv2d(x, w, stride=1, pad=0):
    """Cross-correlate (c_in,H,W) with (c_out,c_in,k,k); no kernel flip.

    Output extent (H + 2*pad - k)/stride + 1 must be integral on both axes,
    and k must be odd.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError("conv2d expects input (c,H,W) and kernel (o,c,k,k)")
    c_in, h, wd = x.data.shape
    c_out, c_in2, k, k2 = w.data.shape
    if c_in2 != c_in or k != k2:
        raise ShapeError(f"kernel {w.data.shape} incompatible with input {x.data.shape}")
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")
    num_h = h + 2 * pad - k
    num_w = wd + 2 * pad - k
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ShapeError(
            f"conv2d output extent not integral: input {h}x{wd}, k={k}, "
            f"stride={stride}, pad={pad}"
        )
    h_out = num_h // stride + 1
    w_out = num_w // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    y = kernels.conv2d_forward(xp, w.data, stride, h_out, w_out)

    def pull(g):
        g = np.ascontiguousarray(g)
        dxp = kernels.conv2d_grad_input(g, w.data, stride, xp.shape[1], xp.shape[2])
        if pad:
            dxp = dxp[:, pad:-pad, pad:-pad]
        _accum(x, dxp)
        _accum(w, kernels.conv2d_grad_kernel(g, xp, stride, k))
    return _make(y, (x, w), pull)


_INTERP_CACHE = {}


def _interp_matrix(n_in, factor):
    """Row-stochastic (f*n_in, n_in) bilinear weights, half-pixel centers."""
    key = (n_in, factor)
    mat = _INTERP_CACHE.get(key)
    if mat is None:
        n_out = n_in * factor
        mat = np.zeros((n_out, n_in))
        for i in range(n_out):
            src = (i + 0.5) / factor - 0.5
            i0 = int(np.floor(src))
            t = src - i0
            lo = min(max(i0, 0), n_in - 1)
            hi = min(max(i0 + 1, 0), n_in - 1)
            mat[i, lo] += 1.0 - t
            mat[i, hi] += t
        _INTERP_CACHE[key] = mat
    return mat


def upsample_bilinear(x, factor):
    """Bilinear x2 / x4 upsampling with half-pixel sample centers."""
    if factor not in (2, 4):
        raise ShapeError(f"upsample factor must be 2 or 4, got {factor}")
    if x.data.ndim != 3:
        raise ShapeError("upsample_bilinear expects (c,h,w)")
    _, h, w = x.data.shape
    ah = _interp_matrix(h, factor)
    aw = _interp_matrix(w, factor)
    y = np.einsum("ph,chw,qw->cpq", ah, x.data, aw, optimize=True)

    def pull(g):
        _accum(x, np.einsum("ph,cpq,qw->chw", ah, g, aw, optimize=True))
    return _make(y, (x,), pull)


def sum_pool2d(x, factor):
    """Sum over disjoint f x f blocks; total mass is preserved exactly."""
    if x.data.ndim != 3:
        raise ShapeError("sum_pool2d expects (c,h,w)")
    c, h, w = x.data.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"extents {h}x{w} not divisible by pool factor {factor}")
    hb, wb = h // factor, w // factor
    y = x.data.reshape(c, hb, factor, wb, factor).sum(axis=(2, 4))

    def pull(g):
        _accum(x, np.repeat(np.repeat(g, factor, axis=1), factor, axis=2))
    return _make(y, (x,), pull)


# ---------------------------------------------------------------------------
# finite-difference oracle

def finite_diff_grad(f, t, eps=1e-6):
    """Central-difference gradient of scalar-valued ``f`` w.r.t. ``t``.

    Perturbs one element at a time; ``f`` is re-run with recording off, so
    the active tape is untouched.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def value():
        with no_grad():
            out = f(t)
        return out.item() if isinstance(out, Tensor) else float(out)

    grad = np.zeros_like(t.data)
    for idx in np.ndindex(t.data.shape):
        orig = t.data[idx]
        t.data[idx] = orig + eps
        fp = value()
        t.data[idx] = orig - eps
        fm = value()
        t.data[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * eps)
    return Tensor(grad)


def relative_grad_error(analytic, reference):
    """max |analytic - reference| / (|reference| + 1e-8) over elements."""
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    return float(np.max(np.abs(a - r) / (np.abs(r) + 1e-8)))


# ---------------------------------------------------------------------------
# serialization: rank, extents (uint64 LE), then float64 LE values

def write_array(fh, arr):
    arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    if not arr.flags.c_contiguous:
        arr = arr.copy()
    fh.write(np.asarray([arr.ndim], dtype="<u8").tobytes())
    fh.write(np.asarray(arr.shape, dtype="<u8").tobytes())
    fh.write(arr.tobytes())


def read_array(fh):
    head = fh.read(8)
    if len(head) != 8:
        raise IOError("truncated tensor header")
    rank = int(np.frombuffer(head, dtype="<u8")[0])
    shape = tuple(int(v) for v in np.frombuffer(fh.read(8 * rank), dtype="<u8"))
    n = int(np.prod(shape)) if rank else 1
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise IOError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensor(path, t):
    with open(path, "wb") as fh:
        write_array(fh, t.data if isinstance(t, Tensor) else t)


def load_tensor(path):
    with open(path, "rb") as fh:
        return Tensor(read_array(fh))
