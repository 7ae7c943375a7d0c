"""Tumor-focused crop + resample and intensity normalization."""

from __future__ import annotations

import math

import numpy as np

from .errors import DataError
from .volume import Mask, Volume

CROP_MARGIN = 0.25


def _source_coords(src: int, dst: int) -> np.ndarray:
    if dst == 1:
        return np.zeros(1)
    return np.arange(dst) * ((src - 1) / (dst - 1))


def _linear_axis(a: np.ndarray, axis: int, dst: int) -> np.ndarray:
    src = a.shape[axis]
    x = _source_coords(src, dst)
    i0 = np.clip(np.floor(x).astype(int), 0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = x - i0
    shape = [1] * a.ndim
    shape[axis] = dst
    frac = frac.reshape(shape)
    return np.take(a, i0, axis=axis) * (1 - frac) + np.take(a, i1, axis=axis) * frac


def resample_linear(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Separable (tri)linear resampling of the trailing axes, align-corners."""
    out = np.asarray(a, dtype=np.float64)
    lead = out.ndim - len(shape)
    for k, n in enumerate(shape):
        if out.shape[lead + k] != n:
            out = _linear_axis(out, lead + k, n)
    return out


def resample_nearest(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    out = np.asarray(a)
    for axis, n in enumerate(shape):
        src = out.shape[axis]
        idx = np.clip(np.floor(_source_coords(src, n) + 0.5).astype(int), 0, src - 1)
        out = np.take(out, idx, axis=axis)
    return out


def bounding_box(mask: Mask, margin: float = CROP_MARGIN) -> tuple[slice, slice, slice]:
    """(z, y, x) slices of the mask bbox grown by ``margin`` of its extent per side."""
    idx = np.nonzero(mask.data)
    if idx[0].size == 0:
        raise DataError("cannot crop around an empty mask")
    out = []
    for ax, n in zip(idx, mask.data.shape):
        lo, hi = int(ax.min()), int(ax.max())
        pad = math.ceil(margin * (hi - lo + 1))
        out.append(slice(max(lo - pad, 0), min(hi + pad, n - 1) + 1))
    return tuple(out)


def crop_resize(vol: Volume, mask: Mask, target_dims) -> tuple[Volume, Mask]:
    """Crop around the ROI and resample to ``target_dims`` given as (W, H, D)."""
    tw, th, td = (int(t) for t in target_dims)
    if min(tw, th, td) < 1:
        raise DataError(f"target dims must be positive, got {target_dims}")
    zs, ys, xs = bounding_box(mask)
    crop = vol.data[:, zs, ys, xs]
    mcrop = mask.data[zs, ys, xs]
    target = (td, th, tw)
    data = resample_linear(crop, target).astype(np.float32)
    mdata = resample_nearest(mcrop, target).astype(np.uint8)
    spacing = []
    for sp, src, dst in zip(vol.spacing_mm, (crop.shape[3], crop.shape[2], crop.shape[1]), (tw, th, td)):
        spacing.append(sp * (src - 1) / (dst - 1) if src > 1 and dst > 1 else sp * src / dst)
    spacing = tuple(spacing)
    return Volume(data, spacing, vol.modality), Mask(mdata, spacing)


def znormalize(vol: Volume) -> Volume:
    data = vol.data.astype(np.float64)
    out = np.zeros_like(data)
    for c in range(data.shape[0]):
        std = data[c].std()
        if std >= 1e-8:
            out[c] = (data[c] - data[c].mean()) / std
    return Volume(out.astype(np.float32), vol.spacing_mm, vol.modality)
