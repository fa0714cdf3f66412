"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Define-by-run: each op records its parents and a vector-Jacobian closure;
the graph is rebuilt every forward pass and freed afterwards. All math is
double precision so finite-difference checks are tight and training runs
are deterministic.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class TensorError(ValueError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        if not requires_grad:
            for p in _parents:
                if p.requires_grad:
                    requires_grad = True
                    break
        self.requires_grad = requires_grad
        if _grad_enabled and requires_grad:
            self._parents = _parents
            self._vjp = _vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        """Reverse sweep from a scalar output; accumulates into leaf .grad."""
        if self.data.size != 1:
            raise TensorError("backward requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:  # iterative post-order topological sort
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)
            if node._parents:
                node.grad = None  # free interior gradients

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, _parents=(a, b), _vjp=None)
    if out._parents:
        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        out._vjp = vjp
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, _parents=(a, b))
    if out._parents:
        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))
        out._vjp = vjp
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, _parents=(a, b))
    if out._parents:
        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._vjp = vjp
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, _parents=(a, b))
    if out._parents:
        def vjp(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out._vjp = vjp
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise TensorError("matmul expects 2-D operands")
    out = Tensor(a.data @ b.data, _parents=(a, b))
    if out._parents:
        def vjp(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._vjp = vjp
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])
        out._vjp = vjp
    return out


def narrow(a, axis, start, length) -> Tensor:
    """Contiguous slice of `length` elements along `axis`."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx], _parents=(a,))
    if out._parents:
        def vjp(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)
        out._vjp = vjp
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), _parents=(a,))
    if out._parents:
        def vjp(g):
            a._accumulate(g.reshape(a.data.shape))
        out._vjp = vjp
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,))
    if out._parents:
        mask = a.data > 0.0

        def vjp(g):
            a._accumulate(g * mask)
        out._vjp = vjp
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, _parents=(a,))
    if out._parents:
        def vjp(g):
            a._accumulate(g * (1.0 - t * t))
        out._vjp = vjp
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = Tensor(s, _parents=(a,))
    if out._parents:
        def vjp(g):
            a._accumulate(g * s * (1.0 - s))
        out._vjp = vjp
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(x)), evaluated stably; derivative sigmoid(x)."""
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data), _parents=(a,))
    if out._parents:
        s = _sigmoid(a.data)

        def vjp(g):
            a._accumulate(g * s)
        out._vjp = vjp
    return out


def max_along(a, axis) -> Tensor:
    """Max over one axis; ties route the gradient to the lowest index."""
    a = as_tensor(a)
    arg = np.argmax(a.data, axis=axis)  # first occurrence = lowest index
    val = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    out = Tensor(val, _parents=(a,))
    if out._parents:
        def vjp(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis),
                              np.expand_dims(g, axis), axis=axis)
            a._accumulate(full)
        out._vjp = vjp
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))
    if out._parents:
        def vjp(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge, a.data.shape).copy())
        out._vjp = vjp
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tabs(a) -> Tensor:
    """|x|; subgradient sign(x) with sign(0) = 0."""
    a = as_tensor(a)
    out = Tensor(np.abs(a.data), _parents=(a,))
    if out._parents:
        sg = np.sign(a.data)

        def vjp(g):
            a._accumulate(g * sg)
        out._vjp = vjp
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, _parents=(a,))
    if out._parents:
        def vjp(g):
            a._accumulate(g * 2.0 * a.data)
        out._vjp = vjp
    return out


def sqrt(a) -> Tensor:
    """sqrt with subgradient 0 at x = 0 (norms of exactly-zero vectors)."""
    a = as_tensor(a)
    r = np.sqrt(a.data)
    out = Tensor(r, _parents=(a,))
    if out._parents:
        def vjp(g):
            safe = np.where(r > 0.0, r, 1.0)
            a._accumulate(g * np.where(r > 0.0, 0.5 / safe, 0.0))
        out._vjp = vjp
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), _parents=(a,))
    if out._parents:
        def vjp(g):
            a._accumulate(g / a.data)
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for a named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update. Returns new parameter arrays and advanced state."""
    t = state.step_count + 1
    new_params = {}
    m, v = state.first_moment, state.second_moment
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        mi = state.beta1 * m.get(name, 0.0) + (1.0 - state.beta1) * g
        vi = state.beta2 * v.get(name, 0.0) + (1.0 - state.beta2) * (g * g)
        m[name] = mi
        v[name] = vi
        new_params[name] = p - state.lr * (mi / bc1) / (np.sqrt(vi / bc2) + state.eps)
    state.step_count = t
    return new_params, state


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------

def grad_check(f, x, h: float = 1e-6) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    `f` maps a dict of name->ndarray (or a single ndarray) to a scalar
    Tensor. Every coordinate of every array is perturbed; the maximum
    coordinate discrepancy is normalized by the overall gradient scale,
    max(|g_ad| + |g_fd|, 1e-12) with |.| the norm over all coordinates.
    A per-coordinate denominator would only measure float64 rounding of
    the loss on near-zero-gradient coordinates.
    """
    single = not isinstance(x, dict)
    xs = {"x": x} if single else x

    def call(arrs):
        leaves = {k: Tensor(a, requires_grad=True) for k, a in arrs.items()}
        out = f(leaves["x"]) if single else f(leaves)
        return out, leaves

    out, leaves = call(xs)
    out.backward()
    worst_abs = 0.0
    sq_ad = 0.0
    sq_fd = 0.0
    for k, a in xs.items():
        g_ad = leaves[k].grad
        if g_ad is None:
            g_ad = np.zeros_like(a)
        sq_ad += float((g_ad * g_ad).sum())
        flat = np.asarray(a, dtype=np.float64).copy()
        it = np.nditer(flat, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = flat[idx]
            flat[idx] = orig + h
            with no_grad():
                fp = call({**xs, k: flat})[0].item()
            flat[idx] = orig - h
            with no_grad():
                fm = call({**xs, k: flat})[0].item()
            flat[idx] = orig
            g_fd = (fp - fm) / (2.0 * h)
            sq_fd += g_fd * g_fd
            worst_abs = max(worst_abs, abs(float(g_ad[idx]) - g_fd))
    return worst_abs / max(math.sqrt(sq_ad) + math.sqrt(sq_fd), 1e-12)
