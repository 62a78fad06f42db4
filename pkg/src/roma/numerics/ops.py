"""Differentiable primitives.

Shapes must match exactly; the only broadcasting allowed is a trailing
row vector (``add_row``/``mul_row``).  Anything else goes through an
explicit reshape so every backward rule stays short enough to audit.
"""
from __future__ import annotations

import functools
import math
from typing import Callable, Optional, Sequence

import numpy as np

from roma.errors import NumericError, ShapeError
from roma.numerics import kernels
from roma.numerics.tensor import DTYPE, Node, Tape, Tensor

ArrayFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_CALLS: list = []


def replayable(fn):
    """Remember the call that produced a taped node so the tape can be re-executed."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        if not Tape._stack:
            return fn(*args, **kwargs)
        _CALLS.append((wrapper, args, kwargs))
        try:
            return fn(*args, **kwargs)
        finally:
            _CALLS.pop()

    return wrapper


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple, backward: ArrayFn, op: str) -> Tensor:
    tape = Tape.active()
    needs = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(Node(inputs, out, backward, op, _CALLS[-1] if _CALLS else None))
    return out


def primitive(data: np.ndarray, inputs: tuple, backward: ArrayFn, op: str) -> Tensor:
    """Record a custom primitive whose backward rule is supplied by the caller."""
    return _emit(np.asarray(data, dtype=DTYPE), inputs, backward, op)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise -----------------------------------------------------------

@replayable
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


@replayable
def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


@replayable
def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


@replayable
def scale(x: Tensor, c: float) -> Tensor:
    return _emit(x.data * c, (x,), lambda g: (g * c,), "scale")


@replayable
def add_row(x: Tensor, v: Tensor) -> Tensor:
    """``x[..., n] + v[n]``."""
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError(f"add_row: cannot add {v.shape} to rows of {x.shape}")
    n = v.shape[0]
    return _emit(x.data + v.data, (x, v), lambda g: (g, g.reshape(-1, n).sum(axis=0)), "add_row")


@replayable
def mul_row(x: Tensor, v: Tensor) -> Tensor:
    """``x[..., n] * v[n]``."""
    if v.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError(f"mul_row: cannot scale rows of {x.shape} by {v.shape}")
    n = v.shape[0]
    xd, vd = x.data, v.data

    def bw(g):
        return g * vd, (g * xd).reshape(-1, n).sum(axis=0)

    return _emit(xd * vd, (x, v), bw, "mul_row")


@replayable
def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,), "exp")


@replayable
def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


@replayable
def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


@replayable
def softplus(x: Tensor) -> Tensor:
    xd = x.data
    y = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    s = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _emit(y, (x,), lambda g: (g * s,), "softplus")


@replayable
def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = 0.5 * (1.0 + np.tanh(0.5 * xd))
    y = xd * s
    return _emit(y, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),), "silu")


_GELU_C = math.sqrt(2.0 / math.pi)


@replayable
def gelu(x: Tensor) -> Tensor:
    """GELU in its tanh form, ``0.5 x (1 + tanh(c (x + 0.044715 x^3)))``."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _emit(y, (x,), bw, "gelu")


# -- reductions ------------------------------------------------------------

@replayable
def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum_all")


@replayable
def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _emit(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean_all")


@replayable
def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    _same_shape("mse", pred, target)
    diff = pred.data - target.data
    n = diff.size
    val = np.array(np.mean(diff * diff))

    def bw(g):
        gd = (2.0 * float(g) / n) * diff
        return gd, -gd

    return _emit(val, (pred, target), bw, "mse")


# -- shape -----------------------------------------------------------------

@replayable
def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return _emit(y, (x,), lambda g: (g.reshape(old),), "reshape")


@replayable
def transpose(x: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inv)),), "transpose")


@replayable
def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[idx] = g
        return (full,)

    return _emit(x.data[idx], (x,), bw, "slice")


@replayable
def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    ndim = xs[0].ndim
    axis = axis % ndim
    for t in xs[1:]:
        if t.ndim != ndim or any(t.shape[i] != xs[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _emit(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw, "concat")


# -- linear algebra ----------------------------------------------------------

@replayable
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D product, or batched 3-D product with identical batch sizes."""
    ad, bd = a.data, b.data
    ok = (
        (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0])
        or (ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _emit(ad @ bd, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Apply ``x @ w + b`` over the last axis of an arbitrary-rank ``x``."""
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = add_row(y, b)
    return reshape(y, lead + (w.shape[1],))


@replayable
def rowmix(w: np.ndarray, x: Tensor) -> Tensor:
    """``out[b] = w @ x[b]`` for a constant mixing matrix ``w``."""
    w = np.asarray(w, dtype=DTYPE)
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"rowmix: cannot mix {x.shape} with {w.shape}")
    wt = w.T
    return _emit(np.einsum("mk,bkf->bmf", w, x.data), (x,), lambda g: (np.einsum("km,bmf->bkf", wt, g),), "rowmix")


def outer_rows(mask: np.ndarray, v: Tensor) -> Tensor:
    """``out[b, k, :] = mask[b, k] * v[b, :]`` for a constant ``mask``."""
    mask = np.asarray(mask, dtype=DTYPE)
    if v.ndim != 2 or mask.ndim != 2 or mask.shape[0] != v.shape[0]:
        raise ShapeError(f"outer_rows: mask {mask.shape} incompatible with {v.shape}")
    return matmul(Tensor(mask[:, :, None]), reshape(v, (v.shape[0], 1, v.shape[1])))


# -- normalisation -----------------------------------------------------------

@replayable
def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (boolean, broadcastable to ``x``) marks allowed entries; a row
    with no allowed entry is returned as all zeros.
    """
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax_rows: NaN input")
    if mask is None:
        e = np.exp(xd - np.max(xd, axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.asarray(mask, dtype=bool)
        k = xd.shape[-1]
        rows = xd.reshape(-1, k)
        if mask.ndim >= 1 and mask.shape[-1] == k and xd.shape[xd.ndim - mask.ndim:] == mask.shape:
            mrows = np.ascontiguousarray(mask.reshape(-1, k))
        else:
            mrows = np.ascontiguousarray(np.broadcast_to(mask, xd.shape).reshape(-1, k))
        y = kernels.masked_softmax(rows, mrows).reshape(xd.shape)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), bw, "softmax")


@replayable
def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: last dimension is 0")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match d={d}")
    xd = x.data
    out, xhat, rstd = kernels.layer_norm_rows(xd.reshape(-1, d), gamma.data, beta.data, eps)
    out = out.reshape(xd.shape)
    xhat = xhat.reshape(xd.shape)
    rstd = rstd.reshape(xd.shape[:-1] + (1,))
    gd = gamma.data

    def bw(g):
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, d)
        return dx, (flat * xhat.reshape(-1, d)).sum(axis=0), flat.sum(axis=0)

    return _emit(out, (x, gamma, beta), bw, "layer_norm")
