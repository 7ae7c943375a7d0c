"""Radiomics-guided contrastive loss and the joint training objective."""

from __future__ import annotations

import torch

from . import ops


def similarity_logits(v_img, v_rad, temperature: float):
    """Pairwise cosine similarities / t over the pooled 2B vectors, self-pairs masked to -inf."""
    z = ops.l2_normalize(ops.concat([v_img, v_rad], dim=0))
    s = ops.scalar_mul(z @ z.T, 1.0 / temperature)
    eye = torch.eye(s.shape[0], dtype=torch.bool)
    return s.masked_fill(eye, float("-inf"))


def contrastive_loss(v_img, v_rad, temperature: float = 0.1):
    """Symmetric NT-Xent over image/radiomics projections of one batch.

    Row ``i`` of ``v_img`` and ``v_rad`` belong to the same subject (the
    positive pair); every other vector in the pooled 2B set is a negative.
    The result is the mean anchor loss over all 2B anchors.
    """
    if v_img.shape != v_rad.shape or v_img.ndim != 2:
        raise ValueError(f"expected matching (B, P) batches, got {tuple(v_img.shape)} and {tuple(v_rad.shape)}")
    b = v_img.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs B >= 2")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    s = similarity_logits(v_img, v_rad, temperature)
    pos = torch.cat([torch.arange(b, 2 * b), torch.arange(0, b)])
    positive = s[torch.arange(2 * b), pos]
    return (ops.logsumexp(s, dim=1) - positive).mean()


def guidance_loss(model, out, radiomics: dict, temperature: float):
    """Mean over modalities of the per-modality contrastive loss."""
    losses = []
    for m in model.cfg.modalities:
        v_i = model.project_image(m, out.gap[m])
        v_r = model.project_radiomics(m, radiomics[m].to(v_i.dtype))
        losses.append(contrastive_loss(v_i, v_r, temperature))
    return torch.stack(losses).mean()


def total_loss(logit, label, l_rg=None, lam: float = 1.0):
    if lam < 0:
        raise ValueError("lam must be >= 0")
    label = torch.as_tensor(label, dtype=logit.dtype).reshape(logit.shape)
    loss = ops.bce_with_logits(logit, label)
    if l_rg is not None and lam > 0:
        loss = loss + lam * l_rg
    return loss
