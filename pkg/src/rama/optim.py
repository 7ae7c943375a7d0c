"""Adam with bias correction, written out so every update is inspectable."""

from __future__ import annotations

import torch


def adam_step(param, grad, m, v, step: int, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place update of ``param``, ``m`` and ``v`` for 1-based ``step``."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ValueError("adam_step: parameter, gradient and state shapes differ")
    with torch.no_grad():
        m.mul_(beta1).add_((1 - beta1) * grad)
        v.mul_(beta2).add_((1 - beta2) * (grad * grad))
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        param.sub_(lr * m_hat / (torch.sqrt(v_hat) + eps))


class Adam:
    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for n, p in self.params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            adam_step(p, g, self.m[n], self.v[n], self.t, self.lr, self.beta1, self.beta2, self.eps)
