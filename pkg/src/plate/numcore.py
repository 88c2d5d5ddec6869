"""Small reverse-mode autodiff engine over numpy arrays.

Only the operations needed by the planning models are provided. Every op
records its parents and a closure that pushes the upstream gradient back
to them; :meth:`Tensor.backward` walks the graph once in reverse
topological order.

Broadcasting is deliberately limited: elementwise binary ops require equal
shapes, except for :func:`add_bias` (a trailing-axis vector added to every
row) and :func:`add_mask` (a constant added to the trailing two axes).
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class NumericError(FloatingPointError):
    """Raised when a NaN or infinity shows up where it must not."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeError(f"gradient shape {pg.shape} != value shape {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar; all routed through the functional ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x, b):
    """``x[..., j] + b[j]``: the one broadcast this library allows."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match rows of {x.shape}")

    def backward(g):
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)

    return _make(x.data + b.data, (x, b), backward)


def add_mask(x, mask):
    """Add a constant ``(T, T)`` mask to the trailing two axes of ``x``."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=DTYPE)
    if x.shape[-2:] != mask.shape:
        raise ShapeError(f"add_mask: mask {mask.shape} vs scores {x.shape}")
    return _make(x.data + mask, (x,), lambda g: (g,))


def leaky_relu(x, slope=0.01):
    x = as_tensor(x)
    pos = x.data > 0
    d = np.where(pos, 1.0, slope)
    return _make(x.data * d, (x,), lambda g: (g * d,))


def relu(x):
    x = as_tensor(x)
    pos = (x.data > 0).astype(DTYPE)
    return _make(x.data * pos, (x,), lambda g: (g * pos,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def dropout(x, rate, rng):
    """Inverted dropout. Identity when ``rate`` is 0 or ``rng`` is None."""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(DTYPE) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product over the trailing two axes.

    ``b`` is either 2-D (a weight matrix shared by every leading index of
    ``a``) or has exactly the same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading axes differ {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward)


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(x, index, axis):
    """Select integer positions along ``axis`` (gradient scattered back)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0) if index.ndim else g)
        return (gx,)

    return _make(np.take(x.data, index, axis=axis), (x,), backward)


def embedding(table, ids):
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# reductions, normalisation, losses
# ---------------------------------------------------------------------------


def total(x):
    x = as_tensor(x)
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def add_scalars(terms):
    """Sum a list of 0-d tensors."""
    terms = list(terms)
    if not terms:
        raise ValueError("add_scalars: nothing to add")
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def softmax_rows(x):
    """Softmax over the last axis with max-subtraction.

    Entries equal to ``-inf`` get probability exactly 0. A row that is
    entirely ``-inf`` has no admissible entry and raises.
    """
    x = as_tensor(x)
    if x.data.size == 0 or x.ndim == 0:
        raise ShapeError("softmax_rows: empty array")
    m = x.data.max(axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise ShapeError("softmax_rows: a row has no finite entry")
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def log_softmax_np(x):
    x = np.asarray(x, dtype=DTYPE)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gg = g.reshape(-1, d)
        dgamma = (gg * xhat.reshape(-1, d)).sum(axis=0)
        dbeta = gg.sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), backward)


def cross_entropy(logits, targets):
    """Mean over rows of ``-log softmax(logits)[target]``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects logits of shape (T, V)")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} rows but {targets.shape} targets")
    if n == 0:
        raise ShapeError("cross_entropy: no rows")
    if targets.min() < 0 or targets.max() >= v:
        raise IndexError(f"cross_entropy: target outside [0, {v})")
    logp = log_softmax_np(logits.data)
    value = -logp[np.arange(n), targets].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return (p * (float(g) / n),)

    return _make(np.asarray(value), (logits,), backward)


def mse(pred, target):
    """Mean of squared elementwise differences."""
    pred, target = as_tensor(pred), as_tensor(target)
    _require_same_shape(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = diff * (2.0 * float(g) / n)
        return gp, -gp

    return _make(np.asarray((diff * diff).mean()), (pred, target), backward)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` and ``grads`` are dicts of name -> ndarray. Names missing from
    ``grads`` are treated as zero-gradient. Returns ``params``.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"grad for {name!r} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def numerical_grad(fn: Callable[[], Tensor], arrays: Sequence[np.ndarray], step=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. each array (perturbed in place)."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a| + |n|, floor)``, maximised."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def grad_check(fn: Callable[..., Tensor], inputs: Iterable[Tensor], step=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` is called with the input tensors and must return a scalar tensor.
    Inputs are perturbed in place and restored.
    """
    inputs = list(inputs)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    fn(*inputs).backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    numeric = numerical_grad(lambda: fn(*inputs), [x.data for x in inputs], step)
    return max((relative_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)


def check_finite(x, what="value"):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what}")
    return x


def uniform_init(rng, fan_in, shape):
    """``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)
