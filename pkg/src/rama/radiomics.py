"""Tumor-ROI radiomics: shape, first-order (histogram) and GLCM texture features.

Reductions that would otherwise depend on voxel traversal order use sorted
values or ``math.fsum`` so that features are exactly invariant to translating
or rotating the ROI by 90 degrees.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial.distance import pdist

from .errors import DataError
from .volume import Mask, Subject

N_LEVELS = 32

SHAPE_NAMES = ("voxel_count", "volume_mm3", "surface_area_mm2", "sphericity",
               "max_diameter_mm", "elongation", "flatness")
FIRST_ORDER_NAMES = ("min", "max", "range", "mean", "median", "p10", "p90", "iqr",
                     "variance", "skewness", "kurtosis", "energy", "entropy")
GLCM_NAMES = ("contrast", "correlation", "asm", "homogeneity", "glcm_entropy")
FEATURE_NAMES = SHAPE_NAMES + FIRST_ORDER_NAMES + GLCM_NAMES

DEFAULT_CHANNEL = {"DCE": 1, "ADC": 0}

# The 13 distance-1 neighbours, one of each +/- pair, as (dx, dy, dz).
OFFSETS = tuple(o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0))


def _roi(mask) -> np.ndarray:
    m = mask.bool() if isinstance(mask, Mask) else np.asarray(mask).astype(bool)
    if not m.any():
        raise DataError("empty ROI mask")
    return m


def quantize_roi(channel, mask, n_levels: int = N_LEVELS) -> np.ndarray:
    """Equal-width gray levels over the ROI's [min, max]; -1 outside the ROI."""
    if n_levels < 2:
        raise DataError("need at least 2 gray levels")
    m = _roi(mask)
    x = np.asarray(channel, dtype=np.float64)
    vals = x[m]
    lo, hi = vals.min(), vals.max()
    levels = np.full(x.shape, -1, dtype=np.int64)
    if hi > lo:
        q = np.floor((vals - lo) / (hi - lo) * n_levels)
        levels[m] = np.clip(q, 0, n_levels - 1).astype(np.int64)
    else:
        levels[m] = 0
    return levels


class Glcm(NamedTuple):
    p: np.ndarray  # symmetric, sums to 1 unless n_pairs == 0
    n_pairs: int

    @property
    def empty(self) -> bool:
        return self.n_pairs == 0


def _shifted(a: np.ndarray, offset) -> tuple[np.ndarray, np.ndarray]:
    """Views (a[p], a[p + offset]) over every p where both lie in the grid."""
    src, dst = [], []
    for o, n in zip(offset[::-1], a.shape):  # offset is (dx, dy, dz); a is (z, y, x)
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    return a[tuple(src)], a[tuple(dst)]


def glcm(levels: np.ndarray, mask, offset, n_levels: int = N_LEVELS) -> Glcm:
    offset = tuple(int(o) for o in offset)
    if offset == (0, 0, 0):
        raise DataError("GLCM offset must be nonzero")
    m = _roi(mask)
    lv = np.where(m, levels, -1)
    a, b = _shifted(lv, offset)
    both = (a >= 0) & (b >= 0)
    counts = np.bincount(a[both] * n_levels + b[both], minlength=n_levels * n_levels)
    counts = counts.reshape(n_levels, n_levels).astype(np.float64)
    n_pairs = int(both.sum())
    if n_pairs == 0:
        return Glcm(counts, 0)
    counts = counts + counts.T
    return Glcm(counts / counts.sum(), n_pairs)


def glcm_matrix_features(p: np.ndarray) -> np.ndarray:
    """contrast, correlation, asm, homogeneity, entropy (bits) of one normalized GLCM."""
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    contrast = np.sum((i - j) ** 2 * p)
    px, py = p.sum(axis=1), p.sum(axis=0)
    lv = np.arange(n)
    mu_x, mu_y = np.sum(lv * px), np.sum(lv * py)
    sd_x = math.sqrt(np.sum((lv - mu_x) ** 2 * px))
    sd_y = math.sqrt(np.sum((lv - mu_y) ** 2 * py))
    if sd_x * sd_y < 1e-15:
        correlation = 1.0
    else:
        correlation = (np.sum(i * j * p) - mu_x * mu_y) / (sd_x * sd_y)
    asm = np.sum(p**2)
    homogeneity = np.sum(p / (1.0 + np.abs(i - j)))
    nz = p[p > 0]
    entropy = -np.sum(nz * np.log2(nz))
    return np.array([contrast, correlation, asm, homogeneity, entropy])


def glcm_features(channel, mask, n_levels: int = N_LEVELS) -> np.ndarray:
    m = _roi(mask)
    levels = quantize_roi(channel, m, n_levels)
    rows = []
    for off in OFFSETS:
        g = glcm(levels, m, off, n_levels)
        if not g.empty:
            rows.append(glcm_matrix_features(g.p))
    if not rows:
        # no neighbouring ROI voxels at all: treat as a single-level texture
        return np.array([0.0, 1.0, 1.0, 1.0, 0.0])
    rows = np.array(rows)
    return np.array([math.fsum(rows[:, k]) / len(rows) for k in range(rows.shape[1])])


def first_order(channel, mask, n_levels: int = N_LEVELS) -> np.ndarray:
    m = _roi(mask)
    x = np.sort(np.asarray(channel, dtype=np.float64)[m])
    n = x.size
    lo, hi = x[0], x[-1]
    mean = math.fsum(x) / n
    dev = x - mean
    m2 = math.fsum(dev**2) / n
    if m2 < 1e-12:
        skew = kurt = 0.0
    else:
        skew = (math.fsum(dev**3) / n) / m2**1.5
        kurt = (math.fsum(dev**4) / n) / m2**2
    p10, p25, p50, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    energy = math.fsum(x**2)
    if hi > lo:
        bins = np.clip(np.floor((x - lo) / (hi - lo) * n_levels), 0, n_levels - 1).astype(int)
        prob = np.bincount(bins, minlength=n_levels) / n
        prob = prob[prob > 0]
        entropy = -float(np.sum(prob * np.log2(prob)))
    else:
        entropy = 0.0
    return np.array([lo, hi, hi - lo, mean, p50, p10, p90, p75 - p25, m2, skew, kurt, energy, entropy])


def shape_features(mask, spacing=None) -> np.ndarray:
    if spacing is None:
        spacing = mask.spacing_mm if isinstance(mask, Mask) else (1.0, 1.0, 1.0)
    sx, sy, sz = (float(s) for s in spacing)
    m = _roi(mask)
    count = int(m.sum())
    volume = count * sx * sy * sz

    padded = np.pad(m, 1)
    faces = []
    for axis in range(3):
        faces.append(int(np.count_nonzero(np.diff(padded.astype(np.int8), axis=axis))))
    # axes are (z, y, x): z-faces have area sx*sy, y-faces sx*sz, x-faces sy*sz
    area = math.fsum([faces[0] * sx * sy, faces[1] * sx * sz, faces[2] * sy * sz])
    sphericity = math.pi ** (1 / 3) * (6 * volume) ** (2 / 3) / area

    idx = np.argwhere(m)
    idx = idx - idx.min(axis=0)  # integer shift keeps translation invariance exact
    coords = idx[:, ::-1] * np.array([sx, sy, sz])
    if count == 1:
        return np.array([count, volume, area, sphericity, 0.0, 1.0, 1.0])
    boundary = m & ~binary_erosion(m, border_value=0)
    bidx = np.argwhere(boundary) - np.argwhere(m).min(axis=0)
    bcoords = bidx[:, ::-1] * np.array([sx, sy, sz])
    max_diameter = float(pdist(bcoords).max()) if len(bcoords) > 1 else 0.0
    lam = np.sort(np.linalg.eigvalsh(np.cov(coords.T, bias=True)))[::-1]
    lam = np.maximum(lam, 0.0)
    elongation = math.sqrt(lam[1] / lam[0]) if lam[0] > 0 else 1.0
    flatness = math.sqrt(lam[2] / lam[0]) if lam[0] > 0 else 1.0
    return np.array([count, volume, area, sphericity, max_diameter, elongation, flatness])


@dataclass(frozen=True)
class RadiomicsVector:
    values: np.ndarray
    modality: str = ""

    names = FEATURE_NAMES

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


def extract(subject: Subject, modality: str, channel_index: int | None = None,
            n_levels: int = N_LEVELS) -> RadiomicsVector:
    vol = subject.volume(modality)
    if channel_index is None:
        channel_index = DEFAULT_CHANNEL[modality]
    ch = vol.channel(channel_index)
    values = np.concatenate([
        shape_features(subject.mask, subject.mask.spacing_mm),
        first_order(ch, subject.mask, n_levels),
        glcm_features(ch, subject.mask, n_levels),
    ])
    if not np.all(np.isfinite(values)):
        raise DataError(f"subject {subject.id}: non-finite radiomics for {modality}")
    return RadiomicsVector(values, modality)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, vectors) -> "Standardizer":
        x = np.asarray(vectors, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("standardizer needs a non-empty 2D set of vectors")
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), 1e-8))

    def apply(self, vector) -> np.ndarray:
        return (np.asarray(vector, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


standardizer_fit = Standardizer.fit


def standardizer_apply(s: Standardizer, vector) -> np.ndarray:
    return s.apply(vector)
