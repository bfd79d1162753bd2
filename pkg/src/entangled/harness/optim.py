"""In-place optimisers over lists of leaf tensors."""
from __future__ import annotations

import numpy as np


class SGDMomentum:
    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


class Adam:
    def __init__(self, params, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad**2
            p.data -= self.lr * corr * m / (np.sqrt(v) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients so their joint l2 norm is at most ``max_norm``; returns the norm before."""
    total = float(np.sqrt(sum(np.sum(p.grad**2) for p in params if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


def make_optimizer(cfg, params):
    if cfg.name == "sgd_momentum":
        return SGDMomentum(params, cfg.lr, cfg.momentum)
    if cfg.name == "adam":
        return Adam(params, cfg.lr)
    raise ValueError(f"unknown optimizer {cfg.name!r}")
