"""Differentiable neural-net operations on top of the tensor engine.

Convolution is lowered to one GEMM per call via a sliding-window gather, so
on a single core the bulk of the time is spent inside BLAS.  Backward passes
are hand-derived closures; their correctness is pinned down by the
finite-difference suite rather than by trusting the algebra.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, StateError
from .tensor import Tensor, _accumulate, _make


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; leading axes are batch."""
    if w.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape[-1]} inputs vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    xmat = x.data.reshape(-1, x.shape[-1])
    out = xmat @ w.data
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            _accumulate(x, (gmat @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            _accumulate(w, xmat.T @ gmat)
        if b is not None and b.requires_grad:
            _accumulate(b, gmat.sum(axis=0))

    return _make(out.reshape(*lead, w.shape[1]), parents, backward)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zero",
) -> Tensor:
    """2-D cross-correlation of NCHW input with OIHW weights.

    Output extent is ``(H + 2*padding - kh) // stride + 1`` per spatial axis.
    ``pad_mode`` is ``"zero"`` or ``"reflect"``; reflection is routed through
    the differentiable pad op so its border gradients fold back correctly.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: got input {x.shape}, weight {w.shape}")
    n, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: {cin} input channels vs weight expecting {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} must be odd")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} vs {cout} output channels")
    if pad_mode == "reflect" and padding > 0:
        x = pad2d(x, (padding, padding, padding, padding), mode="reflect")
        padding = 0
        n, cin, h, wdt = x.shape
    elif pad_mode not in ("zero", "reflect"):
        raise ShapeError(f"conv2d: unknown pad_mode {pad_mode!r}")
    if h + 2 * padding < kh or wdt + 2 * padding < kw:
        raise ShapeError(f"conv2d: input {h}x{wdt} smaller than kernel {kh}x{kw}")

    p, s = padding, stride
    ho = (h + 2 * p - kh) // s + 1
    wo = (wdt + 2 * p - kw) // s + 1
    # Work in NHWC internally: the window gather and the scatter back both
    # touch memory with the channel axis contiguous, which is several times
    # faster than slicing NCHW windows.
    if p > 0:
        xh = np.zeros((n, h + 2 * p, wdt + 2 * p, cin), dtype=x.data.dtype)
        xh[:, p : p + h, p : p + wdt] = x.data.transpose(0, 2, 3, 1)
    else:
        xh = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    hp, wp = xh.shape[1], xh.shape[2]
    pointwise = kh == 1 and kw == 1 and s == 1
    if pointwise:
        cols = xh.reshape(n * ho * wo, cin)
    else:
        gathered = np.empty((n, ho, wo, kh, kw, cin), dtype=x.data.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gathered[:, :, :, ki, kj] = xh[:, ki : ki + s * ho : s,
                                               kj : kj + s * wo : s]
        cols = gathered.reshape(n * ho * wo, kh * kw * cin)
    # weights as (cout, kh*kw*cin) to match the column layout
    wmat = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        if w.requires_grad:
            dw = (gmat.T @ cols).reshape(cout, kh, kw, cin)
            _accumulate(w, np.ascontiguousarray(dw.transpose(0, 3, 1, 2)))
        if b is not None and b.requires_grad:
            _accumulate(b, gmat.sum(axis=0))
        if x.requires_grad:
            if pointwise:
                dx = (gmat @ wmat).reshape(n, h, wdt, cin)
                _accumulate(x, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
            elif s == 1 and p <= kh - 1 and p <= kw - 1:
                # full correlation of the padded gradient with the kernel
                # rotated 180 degrees: one more GEMM instead of nine
                # strided accumulations.
                gpad = np.zeros((n, ho + 2 * (kh - 1 - p), wo + 2 * (kw - 1 - p), cout),
                                dtype=g.dtype)
                gpad[:, kh - 1 - p : kh - 1 - p + ho,
                     kw - 1 - p : kw - 1 - p + wo] = g.transpose(0, 2, 3, 1)
                gcol = np.empty((n, h, wdt, kh, kw, cout), dtype=g.dtype)
                for ki in range(kh):
                    for kj in range(kw):
                        gcol[:, :, :, ki, kj] = gpad[:, ki : ki + h, kj : kj + wdt]
                gcols = gcol.reshape(n * h * wdt, kh * kw * cout)
                wflip = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)
                wflip = np.ascontiguousarray(wflip).reshape(kh * kw * cout, cin)
                dx = (gcols @ wflip).reshape(n, h, wdt, cin)
                _accumulate(x, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
            else:
                dcols = (gmat @ wmat).reshape(n, ho, wo, kh, kw, cin)
                dxh = np.zeros((n, hp, wp, cin), dtype=g.dtype)
                for ki in range(kh):
                    for kj in range(kw):
                        dxh[:, ki : ki + s * ho : s, kj : kj + s * wo : s] += dcols[
                            :, :, :, ki, kj
                        ]
                dx = dxh[:, p : p + h, p : p + wdt] if p > 0 else dxh
                _accumulate(x, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))

    return _make(out, parents, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax; rejects NaN input outright."""
    if np.isnan(x.data).any():
        raise NumericError("softmax: input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(x, y * (g - inner))

    return _make(y, (x,), backward)


def layer_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    axes: tuple[int, ...] = (-1,),
    eps: float = 1e-5,
) -> Tensor:
    """Normalise over ``axes`` with biased variance, then apply affine."""
    axes = tuple(sorted(ax % x.ndim for ax in axes))
    norm_shape = tuple(x.shape[ax] for ax in axes)
    if gamma.shape != norm_shape or beta.shape != norm_shape:
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} "
            f"vs normalised extents {norm_shape}"
        )
    m = int(np.prod(norm_shape))
    bshape = tuple(x.shape[ax] if ax in axes else 1 for ax in range(x.ndim))
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    xmu = x.data - mu
    var = np.square(xmu).mean(axis=axes, keepdims=True)
    ivar = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xmu * ivar
    out = gb * xhat + bb
    other_axes = tuple(ax for ax in range(x.ndim) if ax not in axes)

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=other_axes).reshape(gamma.shape))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=other_axes).reshape(beta.shape))
        if x.requires_grad:
            dxhat = g * gb
            t1 = dxhat.sum(axis=axes, keepdims=True)
            t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            _accumulate(x, (ivar / m) * (m * dxhat - t1 - xhat * t2))

    return _make(out, (x, gamma, beta), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel batch norm over an NCHW tensor.

    Returns ``(out, new_running_mean, new_running_var)``.  Training mode
    normalises with the batch statistics and blends them into the running
    values with ``momentum`` (biased variance, so a momentum of 1.0 makes a
    following eval pass reproduce the training output exactly).  Eval mode
    requires initialised running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} vs C={c}")
    gb = gamma.data.reshape(1, c, 1, 1)
    bb = beta.data.reshape(1, c, 1, 1)
    axes = (0, 2, 3)
    dt = x.data.dtype

    if training:
        mu = x.data.mean(axis=axes)
        xmu = x.data - mu.reshape(1, c, 1, 1)
        var = np.square(xmu).mean(axis=axes)
        m = x.data.size // c
        if running_mean is None:
            new_mean = mu.copy()
            new_var = var.copy()
        else:
            mom = dt.type(momentum)
            new_mean = (1 - mom) * running_mean + mom * mu
            new_var = (1 - mom) * running_var + mom * var
        ivar = (1.0 / np.sqrt(var + dt.type(eps))).reshape(1, c, 1, 1)
        xhat = xmu * ivar
        out = gb * xhat + bb

        def backward(g):
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gb
                t1 = dxhat.sum(axis=axes, keepdims=True)
                t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                _accumulate(x, (ivar / m) * (m * dxhat - t1 - xhat * t2))

        return _make(out, (x, gamma, beta), backward), new_mean, new_var

    if running_mean is None or running_var is None:
        raise StateError("batch_norm: eval mode before running statistics exist")
    ivar = (1.0 / np.sqrt(running_var + dt.type(eps))).reshape(1, c, 1, 1)
    xhat = (x.data - running_mean.reshape(1, c, 1, 1)) * ivar
    out = gb * xhat + bb

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            _accumulate(x, g * (gb * ivar))

    return _make(out, (x, gamma, beta), backward), running_mean, running_var


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange ``(N, C*r^2, H, W)`` into ``(N, C, H*r, W*r)``.

    Channel ``c*r^2 + dy*r + dx`` lands on output pixel ``(y*r+dy, x*r+dx)``
    of channel ``c``.  Built from reshape and transpose, so the backward pass
    is exactly the inverse rearrangement.
    """
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {x.shape} with upscale {r}")
    n, c, h, w = x.shape
    co = c // (r * r)
    t = x.reshape(n, co, r, r, h, w)
    t = t.transpose(0, 1, 4, 2, 5, 3)
    return t.reshape(n, co, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: {x.shape} with downscale {r}")
    n, c, h, w = x.shape
    t = x.reshape(n, c, h // r, r, w // r, r)
    t = t.transpose(0, 1, 3, 5, 2, 4)
    return t.reshape(n, c * r * r, h // r, w // r)


def _fold_reflect(g: np.ndarray, axis: int, before: int, after: int, length: int):
    """Adjoint of reflect padding along one axis."""
    g = np.moveaxis(g, axis, 0)
    core = g[before : before + length].copy()
    if before:
        core[1 : before + 1] += g[before - 1 :: -1]
    if after:
        tail = g[before + length : before + length + after]
        core[length - 1 - after : length - 1] += tail[::-1]
    return np.moveaxis(core, 0, axis)


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "zero") -> Tensor:
    """Pad the two trailing axes by ``(top, bottom, left, right)``."""
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ShapeError(f"pad2d: negative pad {pads}")
    h, w = x.shape[-2], x.shape[-1]
    if mode == "reflect" and (max(top, bottom) > h - 1 or max(left, right) > w - 1):
        raise ShapeError(f"pad2d: reflect pad {pads} too large for {h}x{w}")
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    if mode == "zero":
        data = np.pad(x.data, width)
    elif mode == "reflect":
        data = np.pad(x.data, width, mode="reflect")
    else:
        raise ShapeError(f"pad2d: unknown mode {mode!r}")

    def backward(g):
        if not x.requires_grad:
            return
        if mode == "zero":
            sl = (Ellipsis, slice(top, top + h), slice(left, left + w))
            _accumulate(x, np.ascontiguousarray(g[sl]))
        else:
            folded = _fold_reflect(g, x.ndim - 1, left, right, w)
            folded = _fold_reflect(folded, x.ndim - 2, top, bottom, h)
            _accumulate(x, np.ascontiguousarray(folded))

    return _make(data, (x,), backward)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Take a spatial window from the two trailing axes."""
    if top + height > x.shape[-2] or left + width > x.shape[-1]:
        raise ShapeError(
            f"crop2d: window {height}x{width}@({top},{left}) outside {x.shape}"
        )
    sl = (Ellipsis, slice(top, top + height), slice(left, left + width))
    data = np.ascontiguousarray(x.data[sl])

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[sl] = g
            _accumulate(x, dx)

    return _make(data, (x,), backward)
