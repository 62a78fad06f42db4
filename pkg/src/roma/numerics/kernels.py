"""Compiled row kernels for the hot normalisation paths."""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def masked_softmax(x, mask):
    """Row softmax of ``x`` (R, K) over entries allowed by ``mask`` (M, K), row r using mask row r % M.

    Rows without an allowed entry come out as zeros.
    """
    rows, k = x.shape
    m_rows = mask.shape[0]
    y = np.zeros_like(x)
    for r in range(rows):
        allow = mask[r % m_rows]
        top = -np.inf
        for j in range(k):
            if allow[j] and x[r, j] > top:
                top = x[r, j]
        if top == -np.inf:
            continue
        s = 0.0
        for j in range(k):
            if allow[j]:
                e = math.exp(x[r, j] - top)
                y[r, j] = e
                s += e
        for j in range(k):
            y[r, j] /= s
    return y


@numba.njit(cache=True)
def layer_norm_rows(x, gamma, beta, eps):
    """Normalise each row of ``x`` (R, d); returns the output, ``xhat`` and ``1/std`` per row."""
    rows, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows)
    for r in range(rows):
        mu = 0.0
        for j in range(d):
            mu += x[r, j]
        mu /= d
        var = 0.0
        for j in range(d):
            t = x[r, j] - mu
            var += t * t
        rs = 1.0 / math.sqrt(var / d + eps)
        rstd[r] = rs
        for j in range(d):
            h = (x[r, j] - mu) * rs
            xhat[r, j] = h
            out[r, j] = h * gamma[j] + beta[j]
    return out, xhat, rstd
