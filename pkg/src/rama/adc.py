"""Apparent diffusion coefficient maps from DWI under a mono-exponential model."""

from __future__ import annotations

import numpy as np

from .errors import DataError

B_VALUES = (0.0, 100.0, 600.0, 800.0)
# (b_lo, b_hi) pairs for the three two-point ADC channels
TWO_POINT_PAIRS = ((0.0, 800.0), (100.0, 800.0), (0.0, 600.0))


def adc_two_point(s_lo, s_hi, b_lo: float, b_hi: float) -> np.ndarray:
    """ADC = ln(S_lo/S_hi)/(b_hi - b_lo); 0 where either signal is nonpositive."""
    if not b_hi > b_lo >= 0:
        raise DataError(f"need b_hi > b_lo >= 0, got b_lo={b_lo}, b_hi={b_hi}")
    s_lo = np.asarray(s_lo, dtype=np.float64)
    s_hi = np.asarray(s_hi, dtype=np.float64)
    valid = (s_lo > 0) & (s_hi > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        adc = np.log(np.where(valid, s_lo, 1.0) / np.where(valid, s_hi, 1.0)) / (b_hi - b_lo)
    return np.where(valid, np.maximum(adc, 0.0), 0.0)


def adc_ls_fit(signals, b_values=B_VALUES) -> np.ndarray:
    """Least-squares fit of ln S against b, per voxel; returns -slope clamped at 0.

    ``signals`` is indexed by b-value along the first axis.
    """
    signals = np.asarray(signals, dtype=np.float64)
    b = np.asarray(b_values, dtype=np.float64)
    if signals.shape[0] != 4 or b.shape != (4,):
        raise DataError(f"expected 4 DWI channels and 4 b-values, got {signals.shape[0]} and {b.size}")
    valid = np.all(signals > 0, axis=0)
    logs = np.log(np.where(valid, signals, 1.0))
    bc = (b - b.mean()).reshape((4,) + (1,) * (signals.ndim - 1))
    slope = np.sum(bc * (logs - logs.mean(axis=0)), axis=0) / np.sum(bc**2)
    return np.where(valid, np.maximum(-slope, 0.0), 0.0)


def adc_channels(dwi, b_values=B_VALUES) -> np.ndarray:
    """Stack the 4-value fit and the three two-point maps into a (4, ...) array."""
    dwi = np.asarray(dwi, dtype=np.float64)
    index = {float(bv): i for i, bv in enumerate(b_values)}
    maps = [adc_ls_fit(dwi, b_values)]
    for lo, hi in TWO_POINT_PAIRS:
        maps.append(adc_two_point(dwi[index[lo]], dwi[index[hi]], lo, hi))
    return np.stack(maps)
