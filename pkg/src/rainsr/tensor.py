"""Dense float64 tensors with a recorded reverse-mode autodiff tape.

Every differentiable operation builds the graph define-by-run: the output
tensor remembers its parents and a closure that scatters the incoming
adjoint back onto them.  ``Tensor.backward()`` runs a reverse topological
sweep from a scalar loss and accumulates ``.grad`` on every reachable
tensor that requires gradients.

The op set is deliberately small: elementwise arithmetic, matmul, softmax,
reductions, shape ops, plus the spatial kernels registered in
:mod:`rainsr.kernels`.  Values are validated to be finite after every op.
"""

from __future__ import annotations

import contextlib

import numpy as np

# Module-level switches.  FINITE_CHECKS enforces the "no NaN/Inf ever"
# invariant; GRAD_ENABLED gates tape recording (see no_grad()).
FINITE_CHECKS = True
GRAD_ENABLED = True


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised on malformed autodiff graphs (cycles, missing gradients)."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (frozen/inference paths)."""
    global GRAD_ENABLED
    prev = GRAD_ENABLED
    GRAD_ENABLED = False
    try:
        yield
    finally:
        GRAD_ENABLED = prev


def _check_finite(arr, op):
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _unbroadcast(g, shape):
    """Sum an adjoint down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """N-dimensional float64 array node on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    # -- tape machinery -------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse sweep from this scalar; fills ``.grad`` on the graph."""
        if self.data.size != 1:
            raise GraphError("backward() requires a scalar loss node")
        topo = []
        visited = set()
        onstack = set()
        stack = [(self, iter(self._parents))]
        visited.add(id(self))
        onstack.add(id(self))
        while stack:
            node, parents = stack[-1]
            nxt = next(parents, None)
            if nxt is None:
                topo.append(node)
                onstack.discard(id(node))
                stack.pop()
                continue
            if id(nxt) in onstack:
                raise GraphError("cycle detected in autodiff graph")
            if id(nxt) not in visited:
                visited.add(id(nxt))
                onstack.add(id(nxt))
                stack.append((nxt, iter(nxt._parents)))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None:
                node._vjp(node.grad)

    # -- arithmetic -----------------------------------------------------------

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

    def __pow__(self, c):
        return power(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, op, parents, vjp):
    """Create the output node, attaching the tape entry when needed."""
    _check_finite(data, op)
    track = GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = track
    out.name = None
    if track:
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


# -- elementwise binary ops ---------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _record(a.data + b.data, "add", (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _record(a.data - b.data, "sub", (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _record(a.data * b.data, "mul", (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(a.data / b.data, "div", (a, b), vjp)


# -- elementwise unary ops ----------------------------------------------------


def neg(a):
    a = as_tensor(a)

    def vjp(g):
        a._accumulate(-g)

    return _record(-a.data, "neg", (a,), vjp)


def power(a, c):
    a = as_tensor(a)
    c = float(c)
    y = a.data**c

    def vjp(g):
        a._accumulate(g * c * a.data ** (c - 1.0))

    return _record(y, "pow", (a,), vjp)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def vjp(g):
        a._accumulate(g * y)

    return _record(y, "exp", (a,), vjp)


def log(a):
    a = as_tensor(a)

    def vjp(g):
        a._accumulate(g / a.data)

    return _record(np.log(a.data), "log", (a,), vjp)


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def vjp(g):
        a._accumulate(g * 0.5 / y)

    return _record(y, "sqrt", (a,), vjp)


def absolute(a):
    a = as_tensor(a)

    def vjp(g):
        a._accumulate(g * np.sign(a.data))

    return _record(np.abs(a.data), "abs", (a,), vjp)


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        a._accumulate(g * y * (1.0 - y))

    return _record(y, "sigmoid", (a,), vjp)


def silu(a):
    """x * sigmoid(x); smooth activation, safe for finite-difference checks."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    y = a.data * s

    def vjp(g):
        a._accumulate(g * (s + y * (1.0 - s)))

    return _record(y, "silu", (a,), vjp)


# -- matmul / softmax ---------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")

    def vjp(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _record(a.data @ b.data, "matmul", (a, b), vjp)


def softmax(a, axis=-1):
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    a = as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        a._accumulate((g - inner) * y)

    return _record(y, "softmax", (a,), vjp)


# -- reductions ---------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def vjp(g):
        a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims))

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size / y.size

    def vjp(g):
        a._accumulate(_expand_reduced(g, a.data.shape, axis, keepdims) / count)

    return _record(y, "mean", (a,), vjp)


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)

    def vjp(g):
        a._accumulate(g.reshape(a.data.shape))

    return _record(a.data.reshape(shape), "reshape", (a,), vjp)


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))

    def vjp(g):
        a._accumulate(g.transpose(inv) if inv is not None else g.transpose())

    return _record(a.data.transpose(axes), "transpose", (a,), vjp)


def take(a, idx):
    """Basic slicing/int indexing with scatter-add backward."""
    a = as_tensor(a)

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accumulate(buf)

    return _record(a.data[idx], "take", (a,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _record(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), vjp)


# -- gradient extraction ------------------------------------------------------


def gradients(loss, params):
    """Backward from ``loss`` and return adjoints for ``params``.

    ``params`` may be a dict (name -> Tensor) or an iterable of Tensors;
    the return mirrors the container type.  Requesting the gradient of a
    tensor that never entered the tape is an error; parameters that are on
    the tape but unreachable from the loss get zero adjoints.
    """
    loss.backward()
    named = isinstance(params, dict)
    items = params.items() if named else [(i, p) for i, p in enumerate(params)]
    out = {}
    for key, p in items:
        if not p.requires_grad:
            raise GraphError(f"gradient requested for non-recorded node {key!r}")
        out[key] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out if named else [out[k] for k, _ in items]


def zero_grads(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None
