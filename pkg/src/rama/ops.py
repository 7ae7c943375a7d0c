"""Differentiable op set used by the network, plus a finite-difference gradcheck.

Ops are thin functions over torch autograd. Tensors carry their own
precision; float64 is used for gradient checking only.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

COS_EPS = 1e-8


def conv3d(x, weight, bias=None, stride: int = 1):
    """Zero-padded 'same'-style 3D convolution over (B, C, D, H, W)."""
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv3d: input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    return F.conv3d(x, weight, bias, stride=stride, padding=weight.shape[-1] // 2)


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return F.linear(x, weight, bias)


def group_norm(x, groups: int, weight=None, bias=None, eps: float = 1e-5):
    if x.shape[1] % groups:
        raise ValueError(f"group_norm: {x.shape[1]} channels not divisible by {groups} groups")
    return F.group_norm(x, groups, weight, bias, eps)


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5):
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)


def relu(x):
    return F.relu(x)


def gelu(x):
    """Exact GELU, x * Phi(x) with the erf form."""
    return F.gelu(x, approximate="none")


def softmax(x):
    return torch.softmax(x, dim=-1)


def mean_pool_global(x):
    """(B, C, *spatial) -> (B, C)."""
    return x.flatten(2).mean(dim=-1)


def concat(xs, dim: int = -1):
    return torch.cat(list(xs), dim=dim)


def reshape(x, shape):
    return x.reshape(shape)


def add(a, b):
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def scalar_mul(x, s: float):
    return x * s


def l2_normalize(x, eps: float = COS_EPS):
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True).clamp_min(eps)


def cosine_similarity(a, b, eps: float = COS_EPS):
    """Cosine similarity along the last axis; each norm is floored at ``eps``."""
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"cosine_similarity: width mismatch {a.shape[-1]} vs {b.shape[-1]}")
    return (l2_normalize(a, eps) * l2_normalize(b, eps)).sum(dim=-1)


def logsumexp(x, dim: int = -1):
    return torch.logsumexp(x, dim=dim)


def sigmoid(x):
    return torch.sigmoid(x)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on logits."""
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def param_set(module: torch.nn.Module) -> "OrderedDict[str, torch.Tensor]":
    """Named trainable tensors in registration order."""
    return OrderedDict((n, p) for n, p in module.named_parameters() if p.requires_grad)


def gradcheck(fn: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor] | list,
              probes: int = 20, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` recomputes a scalar from the current values of ``params``. Probe
    coordinates are drawn uniformly across all parameter entries. The error
    per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    if not tensors or sum(t.numel() for t in tensors) == 0:
        return 0.0
    if any(t.dtype != torch.float64 for t in tensors):
        raise ValueError("gradcheck requires float64 parameters")
    for t in tensors:
        t.grad = None
    out = fn()
    if out.numel() != 1:
        raise ValueError(f"gradcheck needs a scalar output, got shape {tuple(out.shape)}")
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]

    sizes = np.array([t.numel() for t in tensors])
    bounds = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    flat = rng.choice(bounds[-1], size=min(probes, bounds[-1]), replace=False)
    worst = 0.0
    with torch.no_grad():
        for k in flat:
            ti = int(np.searchsorted(bounds, k, side="right"))
            idx = int(k - (bounds[ti - 1] if ti else 0))
            view = tensors[ti].view(-1)
            orig = view[idx].item()
            view[idx] = orig + h
            fp = fn().item()
            view[idx] = orig - h
            fm = fn().item()
            view[idx] = orig
            num = (fp - fm) / (2 * h)
            ana = grads[ti].reshape(-1)[idx].item()
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
    return worst
