"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward


def numeric_grad(fn, inputs, epsilon: float = 1e-5) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*inputs)`` w.r.t. each input array."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(fn(*inputs).data)
            flat[i] = orig - epsilon
            fm = float(fn(*inputs).data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * epsilon)
        grads.append(g)
    return grads


def analytic_grad(fn, inputs) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def grad_check(fn, inputs, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` builds a scalar-valued graph from ``inputs`` (leaf tensors with
    ``requires_grad``). Per coordinate the error is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    inputs = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in inputs]
    for t in inputs:
        t.requires_grad = True
    ana = analytic_grad(fn, inputs)
    num = numeric_grad(fn, inputs, epsilon)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size == 0:
            continue
        rel = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        worst = max(worst, float(rel.max()))
    return worst
