"""Minimal dense-tensor math with reverse-mode automatic differentiation.

Everything is float64. The graph is a dynamic tape: each op links its output
tensor to its inputs with a backward closure, and ``backward`` walks the tape
in reverse topological order, accumulating gradients additively. Broadcasting
is deliberately restricted to bias-vector addition along the last axis; all
other shape mismatches raise.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction (evaluation / enumeration paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


def _shape_error(op: str, *shapes) -> ShapeError:
    described = " vs ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {described}")


class Tensor:
    """A dense float64 array, optionally tracking gradients on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate grads of every reachable requires-grad tensor.

        Only defined for scalar outputs: each leaf grad is d(self)/d(leaf),
        accumulated additively across all uses.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience operators used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result; attach it to the tape when grads are live."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """A trainable leaf. With ``rng``, ``data`` is a shape and values are
    drawn normal(0, scale) with scale defaulting to 1/sqrt(fan_in)."""
    if rng is not None:
        shape = tuple(data)
        if scale is None:
            fan_in = shape[0] if len(shape) >= 1 else 1
            scale = 1.0 / math.sqrt(max(fan_in, 1))
        data = rng.normal(0.0, scale, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    """Elementwise add; the single allowed broadcast is (..., n) + (n,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            _accum(a, g)
            _accum(b, g)
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def backward(g):
            _accum(a, g)
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
    else:
        raise _shape_error("add", a.shape, b.shape)
    return _make(a.data + b.data, (a, b), backward)


def multiply(a, b) -> Tensor:
    """Elementwise product of same-shape tensors, or tensor * python scalar."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)

        def backward(g):
            _accum(a, g * c)

        return _make(a.data * c, (a,), backward)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("multiply", a.shape, b.shape)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product. Supports (..., m, k) @ (..., k, n) with identical
    leading dims, and the dense-layer case (..., m, k) @ (k, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise _shape_error("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    stacked_rhs = b.data.ndim > 2
    if stacked_rhs and a.shape[:-2] != b.shape[:-2]:
        raise _shape_error("matmul", a.shape, b.shape)

    def backward(g):
        _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if stacked_rhs:
            _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))
        else:
            ga = a.data.reshape(-1, a.shape[-1])
            gg = g.reshape(-1, g.shape[-1])
            _accum(b, ga.T @ gg)

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row gather: ids of any shape index the first axis of ``table``."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise _shape_error("embedding-lookup", table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding-lookup: id out of range for table with {table.shape[0]} rows"
        )

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return _make(table.data[ids], (table,), backward)


def _softmax_data(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    """Row softmax along the last axis, max-shifted for stability."""
    x = _as_tensor(x)
    s = _softmax_data(x.data)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accum(x, s * (g - inner))

    return _make(s, (x,), backward)


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        _accum(x, g - s * g.sum(axis=-1, keepdims=True))

    return _make(out, (x,), backward)


def log_sum_exp(x) -> Tensor:
    """logsumexp along the last axis (max-shifted)."""
    x = _as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    out = np.log(np.exp(x.data - m).sum(axis=-1, keepdims=True)) + m
    out = out[..., 0]
    s = np.exp(x.data - out[..., None])

    def backward(g):
        _accum(x, s * g[..., None])

    return _make(out, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply an
    elementwise affine with 1-d ``gain`` and ``bias``."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise _shape_error("layer-normalization", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        _accum(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        _accum(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            # d/dx of (x - mu) * inv, classic layer-norm backward
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, term * inv)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
_erf = np.vectorize(math.erf, otypes=[np.float64])


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _as_tensor(x)
    phi = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accum(x, g * (phi + x.data * pdf))

    return _make(x.data * phi, (x,), backward)


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concatenate: empty tensor list")
    axis = axis % ts[0].data.ndim if ts[0].data.ndim else 0
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or \
                other[:axis] + other[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise _shape_error("concatenate", ts[0].shape, t.shape)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def slice_tensor(x, index) -> Tensor:
    """Basic (non-fancy) slicing; backward scatters into zeros."""
    x = _as_tensor(x)
    out_data = x.data[index]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[index] += g

    return _make(out_data, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), backward)


def sum_tensor(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        def backward(g):
            _accum(x, np.full_like(x.data, float(g)))
        return _make(x.data.sum(), (x,), backward)

    def backward(g):
        _accum(x, np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis))

    return _make(x.data.sum(axis=axis), (x,), backward)


def mean_tensor(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return multiply(sum_tensor(x, axis=axis), 1.0 / count)


def cross_entropy(logits, targets, weights=None, reduce: str = "sum") -> Tensor:
    """Softmax cross-entropy against integer targets.

    logits: (N, V); targets: (N,) int ids; weights: optional (N,) constants.
    reduce="sum" gives a scalar sum of w_i * nll_i; reduce="none" gives the
    per-row (N,) vector. Callers normalize by token counts themselves.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise _shape_error("cross-entropy", logits.shape, targets.shape)
    n, v = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"cross-entropy: target id out of range for {v} classes")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise _shape_error("cross-entropy", logits.shape, w.shape)

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    nll = -logp[np.arange(n), targets] * w

    if reduce == "sum":
        def backward(g):
            if logits.requires_grad:
                soft = np.exp(logp)
                grad = soft * w[:, None]
                grad[np.arange(n), targets] -= w
                _accum(logits, grad * float(g))
        return _make(nll.sum(), (logits,), backward)
    if reduce == "none":
        def backward(g):
            if logits.requires_grad:
                soft = np.exp(logp)
                grad = soft * (w * g)[:, None]
                grad[np.arange(n), targets] -= w * g
                _accum(logits, grad)
        return _make(nll, (logits,), backward)
    raise ValueError(f"cross-entropy: unknown reduce mode {reduce!r}")
