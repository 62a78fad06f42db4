"""Selective state-space scan and the gated Mamba-style block."""
from __future__ import annotations

import math

import numba
import numpy as np

from roma.errors import NumericError, ShapeError
from roma.numerics.ops import replayable
from roma.numerics import (
    ParamRegistry, Tape, Tensor, add, add_row, exp, gelu, layer_norm, linear, mul, primitive, scale, silu, slice_axis,
    softplus,
)


@numba.njit(cache=True)
def _decay_arguments(delta, A):
    """``delta[..., None] * A`` without numpy's slow size-n inner broadcast."""
    b, k, e = delta.shape
    n = A.shape[1]
    out = np.empty((b, k, e, n))
    for i in range(b):
        for t in range(k):
            for c in range(e):
                dt = delta[i, t, c]
                for j in range(n):
                    out[i, t, c, j] = dt * A[c, j]
    return out


@numba.njit(cache=True)
def _scan_forward(u, delta, B, C, D, dA, store):
    """Run the recurrence given the decays ``dA``; with ``store`` keep every state."""
    b, k, e = u.shape
    n = B.shape[2]
    y = np.empty_like(u)
    H = np.empty((b, k, e, n)) if store else np.empty((0, 0, 0, 0))
    h = np.zeros((e, n))
    for i in range(b):
        h[:] = 0.0
        for t in range(k):
            for c in range(e):
                du = delta[i, t, c] * u[i, t, c]
                acc = 0.0
                for j in range(n):
                    hv = dA[i, t, c, j] * h[c, j] + du * B[i, t, j]
                    h[c, j] = hv
                    acc += C[i, t, j] * hv
                if store:
                    H[i, t, c, :] = h[c, :]
                y[i, t, c] = acc + D[c] * u[i, t, c]
    return y, H


@numba.njit(cache=True)
def _scan_backward(g, u, delta, B, C, A, D, H, dA):
    """Reverse sweep; ``carry`` holds dA_{t+1} * dL/dh_{t+1}."""
    b, k, e = u.shape
    n = A.shape[1]
    gu = np.zeros_like(u)
    gdelta = np.zeros_like(u)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gA = np.zeros_like(A)
    gD = np.zeros_like(D)
    carry = np.zeros((e, n))
    for i in range(b):
        carry[:] = 0.0
        for t in range(k - 1, -1, -1):
            for c in range(e):
                gy = g[i, t, c]
                dt = delta[i, t, c]
                uv = u[i, t, c]
                gD[c] += gy * uv
                gu_acc = gy * D[c]
                gd_acc = 0.0
                for j in range(n):
                    gh = gy * C[i, t, j] + carry[c, j]
                    gC[i, t, j] += gy * H[i, t, c, j]
                    hprev = H[i, t - 1, c, j] if t > 0 else 0.0
                    g_arg = gh * hprev * dA[i, t, c, j]          # d/d(delta * A)
                    gd_acc += g_arg * A[c, j] + gh * B[i, t, j] * uv
                    gA[c, j] += g_arg * dt
                    gu_acc += gh * B[i, t, j] * dt
                    gB[i, t, j] += gh * dt * uv
                    carry[c, j] = dA[i, t, c, j] * gh
                gu[i, t, c] = gu_acc
                gdelta[i, t, c] = gd_acc
    return gu, gdelta, gB, gC, gA, gD


@replayable
def ssm_scan(u: Tensor, delta: Tensor, B: Tensor, C: Tensor, A: Tensor, D: Tensor) -> Tensor:
    """Left-to-right selective scan.

    Shapes: ``u, delta`` (batch, K, E); ``B, C`` (batch, K, n); ``A`` (E, n),
    strictly negative; ``D`` (E,).  Per channel::

        h_t = exp(delta_t * A) h_{t-1} + delta_t * B_t * u_t
        y_t = <C_t, h_t> + D * u_t
    """
    b, k, e = u.shape
    n = A.shape[1]
    if delta.shape != u.shape or B.shape != (b, k, n) or C.shape != (b, k, n) or A.shape != (e, n) or D.shape != (e,):
        raise ShapeError(
            f"ssm_scan: u{u.shape} delta{delta.shape} B{B.shape} C{C.shape} A{A.shape} D{D.shape} are inconsistent"
        )
    inputs = (u, delta, B, C, A, D)
    taped = Tape.active() is not None and any(t.requires_grad for t in inputs)
    arrays = tuple(t.data for t in inputs)
    dA = _decay_arguments(delta.data, A.data)
    np.exp(dA, out=dA)
    y, H = _scan_forward(u.data, delta.data, B.data, C.data, D.data, dA, taped)
    if not np.all(np.isfinite(y)):
        raise NumericError("ssm_scan: non-finite state")
    return primitive(y, inputs, lambda g: _scan_backward(np.ascontiguousarray(g), *arrays, H, dA), "ssm_scan")


def init_mamba_block(params: ParamRegistry, prefix: str, width: int, inner: int, state: int,
                     mlp_ratio: int, rng: np.random.Generator) -> None:
    d, e, n = width, inner, state
    params.add(f"{prefix}.norm.g", np.ones(d))
    params.add(f"{prefix}.norm.b", np.zeros(d))
    params.add(f"{prefix}.in.w", rng.normal(0.0, 1.0 / math.sqrt(d), (d, 2 * e)))
    params.add(f"{prefix}.in.b", np.zeros(2 * e))
    # columns: [delta (e) | B (n) | C (n)]
    x_proj = np.concatenate([
        rng.normal(0.0, 0.02, (e, e)),
        rng.normal(0.0, 1.0 / math.sqrt(e), (e, 2 * n)),
    ], axis=1)
    params.add(f"{prefix}.x_proj.w", x_proj)
    # softplus^-1 of step sizes spread log-uniformly over [1e-3, 1e-1]
    dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), e))
    params.add(f"{prefix}.delta.b", dt + np.log(-np.expm1(-dt)))
    params.add(f"{prefix}.A_log", np.log(np.tile(np.arange(1, n + 1, dtype=float), (e, 1))))
    params.add(f"{prefix}.D", np.ones(e))
    params.add(f"{prefix}.out.w", np.zeros((e, d)))
    params.add(f"{prefix}.out.b", np.zeros(d))
    params.add(f"{prefix}.mlp_norm.g", np.ones(d))
    params.add(f"{prefix}.mlp_norm.b", np.zeros(d))
    params.add(f"{prefix}.mlp.w1", rng.normal(0.0, 1.0 / math.sqrt(d), (d, mlp_ratio * d)))
    params.add(f"{prefix}.mlp.b1", np.zeros(mlp_ratio * d))
    params.add(f"{prefix}.mlp.w2", np.zeros((mlp_ratio * d, d)))
    params.add(f"{prefix}.mlp.b2", np.zeros(d))


def mlp_residual(x: Tensor, params: ParamRegistry, prefix: str) -> Tensor:
    h = layer_norm(x, params[f"{prefix}.mlp_norm.g"], params[f"{prefix}.mlp_norm.b"])
    h = gelu(linear(h, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"]))
    return add(x, linear(h, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"]))


def ssm_mixer(h: Tensor, params: ParamRegistry, prefix: str) -> Tensor:
    """Gated selective scan over a normalised ``(batch, K, d)`` input."""
    P = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    e, n = P("A_log").shape
    xz = linear(h, P("in.w"), P("in.b"))
    u = silu(slice_axis(xz, -1, 0, e))
    gate = silu(slice_axis(xz, -1, e, 2 * e))
    proj = linear(u, P("x_proj.w"))
    delta = softplus(add_row(slice_axis(proj, -1, 0, e), P("delta.b")))
    Bm = slice_axis(proj, -1, e, e + n)
    Cm = slice_axis(proj, -1, e + n, e + 2 * n)
    A = scale(exp(P("A_log")), -1.0)
    y = mul(ssm_scan(u, delta, Bm, Cm, A, P("D")), gate)
    return linear(y, P("out.w"), P("out.b"))


def mamba_block(x: Tensor, params: ParamRegistry, prefix: str) -> Tensor:
    """Pre-norm gated SSM mixer with residual, then a pre-norm GELU MLP with residual."""
    h = layer_norm(x, params[f"{prefix}.norm.g"], params[f"{prefix}.norm.b"])
    x = add(x, ssm_mixer(h, params, prefix))
    return mlp_residual(x, params, prefix)
