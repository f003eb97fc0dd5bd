"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            # decay acts on the weights directly, not through the moments
            if self.weight_decay:
                p.data *= 1 - self.lr * self.weight_decay
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def global_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their joint L2 norm is at most max_norm; returns the norm before clipping."""
    norm = global_norm(params)
    if max_norm and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm
