"""Finite-difference verification of analytic gradients.

Central differences in float64 with a per-element step scaled by the
element's magnitude.  The reported figure is the worst relative error over
every checked coordinate, so a single wrong backward rule cannot hide behind
a small mean.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6, coords=None) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` at ``x``.

    ``coords`` restricts the estimate to a subset of flat indices; skipped
    entries come back as NaN so callers cannot mistake them for zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    if coords is None:
        coords = range(flat.size)
        grad = np.zeros(flat.size)
    else:
        grad = np.full(flat.size, np.nan)
    for i in coords:
        orig = flat[i]
        h = eps * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative disagreement, guarded against tiny denominators."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(build, inputs: dict[str, np.ndarray], eps: float = 1e-6,
               max_coords: int | None = None, seed: int = 0) -> dict[str, float]:
    """Compare autodiff gradients of ``build`` against finite differences.

    ``build`` maps ``{name: Tensor}`` to a scalar Tensor.  Every input is
    checked in float64.  ``max_coords`` caps the number of coordinates probed
    per input (chosen by a seeded shuffle) so large models stay affordable;
    the analytic value is still compared only at probed coordinates.

    Returns ``{name: max relative error}``.
    """
    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    out = build(tensors)
    out.backward()
    rng = np.random.default_rng(seed)

    errors = {}
    for name, base in inputs.items():
        t = tensors[name]
        analytic = t.grad if t.grad is not None else np.zeros_like(base)

        def f(x, name=name):
            probe = {k: Tensor(v.copy()) for k, v in inputs.items()}
            probe[name] = Tensor(x.copy())
            return build(probe).data

        coords = None
        if max_coords is not None and base.size > max_coords:
            coords = rng.permutation(base.size)[:max_coords]
        numeric = numeric_grad(f, base, eps=eps, coords=coords)
        errors[name] = max_rel_error(analytic, numeric)
    return errors


def module_grad_check(module, loss_fn, extra_inputs: dict[str, np.ndarray],
                      eps: float = 1e-6, max_coords: int | None = None,
                      seed: int = 0) -> dict[str, float]:
    """Gradient-check every parameter of ``module`` plus named extra inputs.

    ``loss_fn(module, tensors)`` must return a scalar Tensor, reading the
    extra inputs from ``tensors``.  The module should already hold float64
    parameters (see ``Module.to_dtype``); its parameter tensors are swapped
    for probes during the check, so treat it as consumed afterwards.
    """
    from .layers import _assign_by_path

    param_names = [n for n, _ in module.named_parameters()]
    base = {n: p.data.copy() for n, p in module.named_parameters()}
    base.update({k: np.asarray(v, dtype=np.float64) for k, v in extra_inputs.items()})

    def build(t):
        for n in param_names:
            _assign_by_path(module, n, t[n])
        return loss_fn(module, t)

    return grad_check(build, base, eps=eps, max_coords=max_coords, seed=seed)
