"""Patch-level similarity between encoder features and the radiomics projection, plus overlays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import ops
from .preprocess import resample_linear

VIEWS = ("axial", "sagittal", "coronal")


def patch_similarity_map(feature_map, v_r, project_image) -> np.ndarray:
    """Cosine similarity of every projected patch vector with ``v_r``.

    ``feature_map`` is (C_E, d, h, w); the result has the grid layout (d, h, w).
    """
    fm = torch.as_tensor(feature_map)
    v_r = torch.as_tensor(v_r, dtype=fm.dtype).reshape(-1)
    c = fm.shape[0]
    patches = fm.reshape(c, -1).T
    with torch.no_grad():
        proj = project_image(patches)
        if proj.shape[-1] != v_r.shape[0]:
            raise ValueError(f"projection width {proj.shape[-1]} != radiomics projection width {v_r.shape[0]}")
        sim = ops.cosine_similarity(proj, v_r.expand_as(proj))
    return np.clip(sim.reshape(fm.shape[1:]).numpy().astype(np.float64), -1.0, 1.0)


def upsample(heatmap, shape) -> np.ndarray:
    return np.clip(resample_linear(heatmap, tuple(shape)), -1.0, 1.0)


def colormap(values) -> np.ndarray:
    """-1 -> blue, 0 -> green, +1 -> red, piecewise linear; returns float RGB in [0, 255]."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    neg = np.minimum(v, 0.0)
    pos = np.maximum(v, 0.0)
    r = 255.0 * pos
    g = 255.0 * (1.0 - np.abs(v))
    b = 255.0 * -neg
    return np.stack([r, g, b], axis=-1)


def _gray(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        return np.zeros_like(a, dtype=np.float64)
    return (a - lo) / (hi - lo) * 255.0


def center_slices(a: np.ndarray) -> dict:
    """Center slices of a (D, H, W) array, with z running upward in the side views."""
    d, h, w = a.shape
    return {
        "axial": a[d // 2],
        "sagittal": a[:, :, w // 2][::-1],
        "coronal": a[:, h // 2, :][::-1],
    }


def overlay_images(channel, heatmap, alpha: float = 0.5) -> dict:
    channel = np.asarray(channel, dtype=np.float64)
    heat = np.asarray(heatmap, dtype=np.float64)
    if heat.shape != channel.shape:
        heat = upsample(heat, channel.shape)
    gray = _gray(channel)
    out = {}
    base, tint = center_slices(gray), center_slices(heat)
    for view in VIEWS:
        g = np.repeat(base[view][..., None], 3, axis=-1)
        rgb = (1 - alpha) * g + alpha * colormap(tint[view])
        out[view] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return out


def render_overlay(channel, heatmap, out_prefix) -> list[Path]:
    """Write ``<out_prefix>_{axial,sagittal,coronal}.png``."""
    paths = []
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for view, rgb in overlay_images(channel, heatmap).items():
        path = prefix.parent / f"{prefix.name}_{view}.png"
        Image.fromarray(np.ascontiguousarray(rgb)).save(path, format="PNG", optimize=False)
        paths.append(path)
    return paths


def roi_contrast(heatmap_up: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """Mean heatmap value inside and outside a binary ROI of the same shape."""
    m = np.asarray(mask).astype(bool)
    return float(heatmap_up[m].mean()), float(heatmap_up[~m].mean())


def subject_heatmaps(model, prepared, standardizers) -> dict:
    """Per-modality (grid heatmap, heatmap upsampled to the input volume) for one prepared subject."""
    if not model.cfg.use_guidance:
        raise ValueError("heatmaps need a model trained with radiomics guidance (projectors)")
    out = {}
    with torch.no_grad():
        for m in model.cfg.modalities:
            x = torch.from_numpy(prepared.images[m][None])
            fm = model.encode(m, x)[0]
            r = torch.from_numpy(standardizers[m].apply(prepared.radiomics[m])).to(fm.dtype)
            v_r = model.project_radiomics(m, r[None])[0]
            grid = patch_similarity_map(fm, v_r, lambda p, m=m: model.project_image(m, p))
            out[m] = (grid, upsample(grid, prepared.images[m].shape[1:]))
    return out
