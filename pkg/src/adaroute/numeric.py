"""Dense float64 arrays with a minimal reverse-mode autodiff tape.

Row-major contiguous layout, limited broadcasting (numpy rules with
gradient un-broadcast by summation). Ops are pure; a graph is recorded
only when an input requires gradients. Tapes are single-threaded.
"""

import threading

import numpy as np

# When True, every op asserts its output is finite. Debug aid, off by default.
CHECK_FINITE = False

# Thread-local so concurrent no_grad() evaluation workers cannot clobber
# the taping state of a training thread. When disabled, ops skip taping
# entirely (evaluation fast path; see no_grad()).
_GRAD_STATE = threading.local()


def grad_enabled():
    return getattr(_GRAD_STATE, "enabled", True)


class no_grad:
    """Context manager suspending tape construction (per thread)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _GRAD_STATE.enabled = False

    def __exit__(self, *exc):
        _GRAD_STATE.enabled = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when an operation's calling contract is violated."""


def _check(data):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced")
    return data


class Tensor:
    """A value node. Leaves created with requires_grad=True are parameters."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        _check(self.data)
        if not grad_enabled() and not requires_grad:
            parents, backward = (), None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse sweep from this scalar; accumulates into .grad of leaves."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    out_data = _check(fwd(a.data, b.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g, a.data, b.data, out_data), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g, a.data, b.data, out_data), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(
        a, b, np.divide,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * x / (y * y),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = _check(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=backward)


def _unary(a, fwd, dx):
    a = as_tensor(a)
    out_data = _check(fwd(a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(dx(g, a.data, out_data))

    return Tensor(out_data, parents=(a,), backward=backward)


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary(a, np.log, lambda g, x, o: g / x)


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sigmoid(a):
    def fwd(x):
        # numerically stable logistic
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, fwd, lambda g, x, o: g * o * (1.0 - o))


def softmax(a, axis=-1):
    def fwd(x):
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        return e / e.sum(axis=axis, keepdims=True)

    def dx(g, x, o):
        return o * (g - (g * o).sum(axis=axis, keepdims=True))

    return _unary(a, fwd, dx)


def log_softmax(a, axis=-1):
    def fwd(x):
        m = x.max(axis=axis, keepdims=True)
        s = x - m
        return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))

    def dx(g, x, o):
        return g - np.exp(o) * g.sum(axis=axis, keepdims=True)

    return _unary(a, fwd, dx)


def logsumexp(a, axis=-1, keepdims=False):
    def fwd(x):
        m = x.max(axis=axis, keepdims=True)
        out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
        return out if keepdims else np.squeeze(out, axis=axis)

    def dx(g, x, o):
        ref = o if keepdims else np.expand_dims(o, axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.exp(x - ref) * gg

    return _unary(a, fwd, dx)


def reduce_sum(a, axis=None, keepdims=False):
    def fwd(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def dx(g, x, o):
        if axis is None:
            return np.broadcast_to(g, x.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, x.shape).copy()

    return _unary(a, fwd, dx)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, parents=(a,), backward=backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of empty list")
    out_data = _check(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor(out_data, parents=tuple(tensors), backward=backward)


def take_rows(a, indices):
    """Select rows along axis 0; gradient scatter-adds back."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return Tensor(out_data, parents=(a,), backward=backward)


def maxpool1d(a, size=2):
    """Non-overlapping max pool along axis 0 of a (T, C) tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("maxpool1d expects a (T, C) tensor")
    t, c = a.data.shape
    n = t // size
    if n < 1:
        raise ShapeError(f"maxpool1d: length {t} shorter than window {size}")
    win = a.data[: n * size].reshape(n, size, c)
    arg = win.argmax(axis=1)
    out_data = win.max(axis=1)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            rows = (np.arange(n)[:, None] * size + arg).ravel()
            cols = np.tile(np.arange(c), n)
            np.add.at(acc, (rows, cols), g.ravel())
            a._accumulate(acc)

    return Tensor(out_data, parents=(a,), backward=backward)


def conv1d_same(x, w, b):
    """Temporal convolution with same-length zero padding.

    x: (T, Cin), w: (K, Cin, Cout), b: (Cout,). K must be odd.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k, cin, cout = w.data.shape
    if k % 2 != 1:
        raise ShapeError("conv1d_same requires odd kernel size")
    if x.data.ndim != 2 or x.data.shape[1] != cin:
        raise ShapeError(f"conv1d_same: input {x.shape} vs kernel {w.data.shape}")
    t = x.data.shape[0]
    pad = k // 2
    xp = np.zeros((t + 2 * pad, cin))
    xp[pad: pad + t] = x.data
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, Cin, K)
    cols = cols.transpose(0, 2, 1).reshape(t, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    out_data = _check(cols @ wmat + b.data)

    def backward(g):
        if w.requires_grad:
            w._accumulate((cols.T @ g).reshape(k, cin, cout))
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(t, k, cin)
            acc = np.zeros_like(xp)
            for j in range(k):
                acc[j: j + t] += gcols[:, j, :]
            x._accumulate(acc[pad: pad + t])

    return Tensor(out_data, parents=(x, w, b), backward=backward)


def stop_gradient(a):
    return Tensor(as_tensor(a).data.copy())


def replace_forward(value, grad_path):
    """Forward value is `value`; gradient flows unchanged into `grad_path`.

    The straight-through construction: the estimator's hard decision is the
    forward value while backward treats the output as the relaxed one.
    """
    grad_path = as_tensor(grad_path)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != grad_path.data.shape:
        raise ShapeError("replace_forward: value/grad-path shape mismatch")

    def backward(g):
        if grad_path.requires_grad:
            grad_path._accumulate(g)

    return Tensor(value, parents=(grad_path,), backward=backward)


def grad_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor; x is the point of evaluation.
    Error metric: |analytic - fd| / max(1, |analytic|), maximized over
    coordinates of x.
    """
    x0 = np.asarray(x, dtype=np.float64)
    leaf = parameter(x0.copy())
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check: f must return a scalar Tensor")
    out.backward()
    analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(x0)

    worst = 0.0
    flat = x0.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        hi = f(Tensor((flat + bump).reshape(x0.shape))).item()
        lo = f(Tensor((flat - bump).reshape(x0.shape))).item()
        fd = (hi - lo) / (2.0 * h)
        a = analytic.ravel()[i]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
