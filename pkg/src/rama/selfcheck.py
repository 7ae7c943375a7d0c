"""End-to-end gradient check on a tiny double-precision model."""

from __future__ import annotations

import numpy as np
import torch

from .config import ModelConfig
from .guidance import guidance_loss, total_loss
from .network import RamaNet
from .ops import gradcheck, param_set

TINY = ModelConfig(input_dims=(16, 16, 8), widths=(2, 2, 4), d_dim=8, heads=2, layers=1,
                   proj_dim=4, rad_hidden=4)


def tiny_batch(cfg: ModelConfig = TINY, batch: int = 2, seed: int = 0):
    rng = np.random.default_rng(seed)
    w, h, d = cfg.input_dims
    images = {m: torch.from_numpy(rng.standard_normal((batch, cfg.in_channels, d, h, w))) for m in cfg.modalities}
    rad = {m: torch.from_numpy(rng.standard_normal((batch, cfg.n_radiomics))) for m in cfg.modalities}
    labels = torch.tensor([i % 2 for i in range(batch)], dtype=torch.float64)
    return images, rad, labels


def end_to_end_gradcheck(cfg: ModelConfig = TINY, probes: int = 40, seed: int = 0,
                         lam: float = 1.0, temperature: float = 0.5) -> tuple[float, int]:
    """Max relative error of total loss gradients; returns (error, parameter count)."""
    torch.manual_seed(seed)
    model = RamaNet(cfg, seed=seed).double()
    images, rad, labels = tiny_batch(cfg, seed=seed)

    def loss():
        out = model(images, rad)
        l_rg = guidance_loss(model, out, rad, temperature) if cfg.use_guidance else None
        return total_loss(out.logit, labels, l_rg, lam)

    params = param_set(model)
    return gradcheck(loss, params, probes=probes, seed=seed), sum(p.numel() for p in params.values())
