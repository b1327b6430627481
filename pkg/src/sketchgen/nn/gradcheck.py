"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, x, eps=1e-6):
    """Central-difference gradient of scalar-valued ``fn`` w.r.t. ndarray x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    """max over elements of |a - n| / max(|a| + |n|, floor)."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, inputs, eps=1e-6, floor=1e-6):
    """Compare analytic and numeric gradients of ``build_loss``.

    build_loss() must rebuild the graph from the current contents of the
    input tensors and return a scalar Tensor.  Returns the worst relative
    error across all inputs.
    """
    loss = build_loss()
    for t in inputs:
        t.grad = None
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = numeric_grad(lambda: float(build_loss().data), t.data, eps=eps)
        worst = max(worst, max_rel_error(analytic, numeric, floor=floor))
    return worst


def projection_loss(out, seed=0):
    """Reduce a tensor to a scalar via a fixed random projection (so a single
    scalar check exercises every output element)."""
    rng = np.random.default_rng(seed)
    proj = Tensor(rng.normal(size=out.shape))
    return (out * proj).sum()
