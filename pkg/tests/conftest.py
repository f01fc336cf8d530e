"""Shared fixtures and independent reference implementations.

The references here are deliberately written loop by loop, with no shared
code or layout tricks from the library, so a bug in the fast paths cannot
hide in its own oracle.
"""

import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.result_type(a, b))
    for i in range(n):
        for j in range(m):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def naive_conv2d(x, w, b=None, stride=1, padding=0):
    """Six nested loops over an NCHW zero-padded cross-correlation."""
    n, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        h += 2 * padding
        wdt += 2 * padding
    ho = (h - kh) // stride + 1
    wo = (wdt - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            for yo in range(ho):
                for xo in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (x[ni, ci, yo * stride + ky, xo * stride + kx]
                                        * w[co, ci, ky, kx])
                    out[ni, co, yo, xo] = acc + (b[co] if b is not None else 0.0)
    return out


def naive_softmax(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    oflat = out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        row = flat[r] - flat[r].max()
        e = np.exp(row)
        oflat[r] = e / e.sum()
    return out


def dense_attention(q, k, v, scale):
    """Explicit QK^T, row softmax, AV for a single (T, D) problem."""
    t = q.shape[0]
    scores = np.zeros((t, t), dtype=np.float64)
    for i in range(t):
        for j in range(t):
            scores[i, j] = float(np.dot(q[i], k[j])) * scale
    attn = naive_softmax(scores)
    out = np.zeros_like(np.asarray(v, dtype=np.float64))
    for i in range(t):
        for j in range(t):
            out[i] += attn[i, j] * v[j]
    return out, attn


def closed_form_psnr_db(sigma: float) -> float:
    return 20.0 * math.log10(255.0 / sigma)
