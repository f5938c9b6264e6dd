"""Minimal deterministic reverse-mode differentiation on numpy arrays.

A :class:`Tensor` wraps a dense array plus a gradient slot; ops build a
dynamic tape and ``backward`` walks it in reverse topological order.  Only
the operations the segment classifiers and the adversarial game need are
provided: 1-D (fractionally-)strided convolution, max pooling, dense,
batchnorm, dropout, the activations, stable log-sum-exp reductions, and a
fused softmax cross-entropy.

Convolutions use "same-ceil" geometry: output length is ceil(L / stride),
realized with asymmetric zero padding (extra unit on the right).  The
fractionally-strided convolution is the exact adjoint of the strided
convolution with the same geometry, which the generator relies on to
mirror the discriminator's length chain.

Every op output is checked for NaN/Inf; training keeps arrays in float32,
gradient checks in float64 (see :func:`set_default_dtype`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_BN_EPS = 1e-5

_DEFAULT_DTYPE = np.float32


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def using_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _guard(data: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite values in tensor")
    return data


class Tensor:
    """Dense array with an optional gradient slot and a tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = _guard(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def as_tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad)


def _make(data, parents, backward_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=parents if requires else (),
        _backward_fn=backward_fn if requires else None,
    )


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / linear algebra

def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(dy):
        return _unbroadcast(dy, a.shape), _unbroadcast(dy, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(dy):
        return _unbroadcast(dy, a.shape), _unbroadcast(-dy, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(dy):
        return (_unbroadcast(dy * b.data, a.shape),
                _unbroadcast(dy * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(dy):
        return (dy * s,)

    return _make(a.data * s, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(dy):
        return (dy * (2.0 * a.data),)

    return _make(a.data * a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch {a.shape} @ {b.shape}")

    def backward(dy):
        da = dy @ b.data.T if a.requires_grad else None
        db = a.data.T @ dy if b.requires_grad else None
        return da, db

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(dy):
        return (dy.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """Collapse all trailing axes into one: (B, ...) -> (B, -1)."""
    return reshape(a, (a.shape[0], -1))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    pos = a.data > 0

    def backward(dy):
        return (dy * np.where(pos, 1.0, alpha).astype(dy.dtype),)

    return _make(np.where(pos, a.data, alpha * a.data), (a,), backward)


def tanh_act(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(dy):
        return (dy * (1.0 - y * y),)

    return _make(y, (a,), backward)


def dropout(a: Tensor, keep_prob: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout (train-time only; eval is the identity upstream)."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    mask = (rng.random(a.shape) < keep_prob).astype(a.data.dtype)
    mask /= keep_prob

    def backward(dy):
        return (dy * mask,)

    return _make(a.data * mask, (a,), backward)


# ---------------------------------------------------------------------------
# reductions / indexing

def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(dy):
        return (np.full_like(a.data, dy / n),)

    return _make(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(dy):
        return (np.full_like(a.data, dy),)

    return _make(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def mean_axis0(a: Tensor) -> Tensor:
    n = a.shape[0]

    def backward(dy):
        return (np.broadcast_to(dy / n, a.shape).astype(a.data.dtype, copy=False),)

    return _make(a.data.mean(axis=0), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(dy):
        da = np.zeros_like(a.data)
        da[:, start:stop] = dy
        return (da,)

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def take_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather one column per row: out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def backward(dy):
        da = np.zeros_like(a.data)
        np.add.at(da, (rows, idx), dy)
        return (da,)

    return _make(a.data[rows, idx], (a,), backward)


def logsumexp(a: Tensor) -> Tensor:
    """Row-wise stable log-sum-exp of a (B, K) tensor -> (B,)."""
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    y = (m + np.log(s)).reshape(-1)
    soft = e / s

    def backward(dy):
        return (soft * dy[:, None],)

    return _make(y, (a,), backward)


# ---------------------------------------------------------------------------
# convolution family

def same_ceil_geometry(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(out_len, pad_left, pad_right) with pad chosen so out = ceil(L/stride)."""
    out_len = -(-length // stride)
    pad_total = max(0, (out_len - 1) * stride + kernel - length)
    pad_left = pad_total // 2
    return out_len, pad_left, pad_total - pad_left


def _gather(xp: np.ndarray, out_len: int, kernel: int, stride: int) -> np.ndarray:
    # (B, Lp, C) -> (B, out_len, kernel, C) window view, materialized
    b, _, c = xp.shape
    patches = np.empty((b, out_len, kernel, c), dtype=xp.dtype)
    for k in range(kernel):
        patches[:, :, k, :] = xp[:, k : k + stride * out_len : stride, :]
    return patches


def _scatter(dpatches: np.ndarray, padded_len: int, stride: int) -> np.ndarray:
    # transpose of _gather: overlap-add patches back onto the padded axis
    b, out_len, kernel, c = dpatches.shape
    out = np.zeros((b, padded_len, c), dtype=dpatches.dtype)
    for k in range(kernel):
        out[:, k : k + stride * out_len : stride, :] += dpatches[:, :, k, :]
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Strided cross-correlation: (B, L, Cin) * (K, Cin, Cout) -> (B, ceil(L/s), Cout)."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("conv1d expects (B, L, Cin) input and (K, Cin, Cout) weight")
    B, L, cin = x.shape
    K, cin_w, cout = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch: input {cin}, weight {cin_w}")
    out_len, pl, pr = same_ceil_geometry(L, K, stride)
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)))
    patches = _gather(xp, out_len, K, stride)
    y = np.tensordot(patches, w.data, axes=([2, 3], [0, 1]))
    if b is not None:
        y += b.data

    def backward(dy):
        dx = None
        if x.requires_grad:
            dpatches = np.tensordot(dy, w.data, axes=([2], [2]))
            dx = _scatter(dpatches, L + pl + pr, stride)[:, pl : pl + L, :]
        dw = (np.tensordot(patches, dy, axes=([0, 1], [0, 1]))
              if w.requires_grad else None)
        db = dy.sum(axis=(0, 1)) if b is not None and b.requires_grad else None
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward)


def frac_conv1d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2,
    target_len: int = 0,
) -> Tensor:
    """Fractionally-strided convolution: exact adjoint of :func:`conv1d`.

    Input (B, M, Cin) with weight (K, Cout, Cin) upsamples to
    (B, target_len, Cout), where the matching forward geometry must give
    ceil(target_len / stride) == M.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("frac_conv1d expects (B, M, Cin) input and (K, Cout, Cin) weight")
    B, M, cin = x.shape
    K, cout, cin_w = w.shape
    if cin != cin_w:
        raise ShapeError(f"frac_conv1d channel mismatch: input {cin}, weight {cin_w}")
    out_len, pl, pr = same_ceil_geometry(target_len, K, stride)
    if out_len != M:
        raise ShapeError(
            f"target_len {target_len} incompatible with input length {M} "
            f"at stride {stride} (forward geometry gives {out_len})"
        )
    padded_len = target_len + pl + pr
    dpatches = np.tensordot(x.data, w.data, axes=([2], [2]))  # (B, M, K, Cout)
    y = _scatter(dpatches, padded_len, stride)[:, pl : pl + target_len, :]
    if b is not None:
        y = y + b.data

    def backward(dy):
        dyp = np.pad(dy, ((0, 0), (pl, pr), (0, 0)))
        patches = _gather(dyp, M, K, stride)  # (B, M, K, Cout)
        dx = (np.tensordot(patches, w.data, axes=([2, 3], [0, 1]))
              if x.requires_grad else None)
        dw = (np.tensordot(patches, x.data, axes=([0, 1], [0, 1]))
              if w.requires_grad else None)
        db = dy.sum(axis=(0, 1)) if b is not None and b.requires_grad else None
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward)


def maxpool1d(x: Tensor, window: int = 8, stride: int = 2) -> Tensor:
    """Per-channel windowed max with same-ceil geometry.

    Padding positions hold -inf and are never selected; gradient routes to
    the argmax position only (first index on ties).
    """
    if x.data.ndim != 3:
        raise ShapeError("maxpool1d expects (B, L, C) input")
    B, L, C = x.shape
    out_len, pl, pr = same_ceil_geometry(L, window, stride)
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)), constant_values=-np.inf)
    patches = _gather(xp, out_len, window, stride)
    amax = patches.argmax(axis=2)  # (B, out_len, C), first max on ties
    y = np.take_along_axis(patches, amax[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(dy):
        dpatches = np.zeros_like(patches)
        np.put_along_axis(dpatches, amax[:, :, None, :], dy[:, :, None, :], axis=2)
        return (_scatter(dpatches, L + pl + pr, stride)[:, pl : pl + L, :],)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization

def batchnorm_train(
    x: Tensor, gamma: Tensor, beta: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize per channel over the batch (and length, for 3-D inputs).

    Returns the output plus the biased batch mean/variance for the caller
    to fold into running statistics.  Batch size 1 is an error: the batch
    variance is undefined.
    """
    if x.shape[0] < 2:
        raise ValueError("batchnorm needs batch size >= 2 in train mode")
    axes = (0,) if x.data.ndim == 2 else (0, 1)
    m = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + _BN_EPS)
    xhat = (x.data - m) * inv
    y = xhat * gamma.data + beta.data
    n = x.data.size // x.shape[-1]

    def backward(dy):
        dxhat = dy * gamma.data
        dgamma = (dy * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = dy.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = (inv / n) * (
                n * dxhat
                - dxhat.sum(axis=axes)
                - xhat * (dxhat * xhat).sum(axis=axes)
            )
        return dx, dgamma, dbeta

    return _make(y, (x, gamma, beta), backward), m, var


def batchnorm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor,
    running_mean: np.ndarray, running_var: np.ndarray,
) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + _BN_EPS)
    xhat = (x.data - running_mean) * inv
    y = xhat * gamma.data + beta.data
    axes = (0,) if x.data.ndim == 2 else (0, 1)

    def backward(dy):
        dx = dy * (gamma.data * inv) if x.requires_grad else None
        dgamma = (dy * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = dy.sum(axis=axes) if beta.requires_grad else None
        return dx, dgamma, dbeta

    return _make(y, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# losses

def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over the last axis (metrics/diagnostics)."""
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and target rows.

    Target rows are probability distributions (one-hot or smoothed); they
    must each sum to 1 and are not differentiated.
    """
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.shape:
        raise ShapeError(f"targets {targets.shape} vs logits {logits.shape}")
    if not np.allclose(targets.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("each target row must sum to 1")
    B = logits.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    log_probs = logits.data - lse
    loss = -(targets * log_probs).sum() / B
    soft = np.exp(log_probs)

    def backward(dy):
        return ((soft - targets) * (dy / B),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)
