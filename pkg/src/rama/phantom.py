"""Synthetic breast-MRI phantoms: ellipsoidal tumor, DCE enhancement curves, DWI-derived ADC."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .adc import B_VALUES, adc_channels
from .errors import DataError
from .volume import Mask, ManifestRow, Subject, Volume, write_manifest, write_volume

DEFAULT_DIMS = (32, 32, 16)
DEFAULT_PREVALENCE = 59 / 191


@dataclass(frozen=True)
class PhantomParams:
    tumor_adc_mean: tuple[float, float] = (0.9e-3, 1.3e-3)  # indexed by label
    tumor_adc_std: float = 0.15e-3
    post_multipliers: tuple[tuple[float, ...], tuple[float, ...]] = ((1.8, 1.5, 1.3), (1.3, 1.35, 1.4))
    heterogeneity: tuple[float, float] = (0.25, 0.05)
    semi_axes: tuple[float, float] = (3.0, 6.0)
    background_adc: float = 1.8e-3
    background_post: tuple[float, ...] = (1.15, 1.2, 1.25)
    dce_level: float = 100.0
    tumor_pre: float = 80.0
    s0_level: float = 1000.0
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 2.0)


def _smooth_field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return f / f.std()


def generate_subject(seed: int, label: int, dims=DEFAULT_DIMS, noise: float = 0.02,
                     params: PhantomParams = PhantomParams(), subject_id: str | None = None) -> Subject:
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label}")
    w, h, d = (int(n) for n in dims)
    rng = np.random.default_rng([int(seed), int(label), w, h, d])
    shape = (d, h, w)

    lo, hi = params.semi_axes
    semi, center = [], []
    for n in shape:
        top = min(hi, (n - 1) / 2)
        if top < lo:
            raise DataError(f"tumor with semi-axis >= {lo} voxels does not fit in dimension {n}")
        a = rng.uniform(lo, top)
        semi.append(a)
        center.append(rng.uniform(a, n - 1 - a))
    zz, yy, xx = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    r2 = sum(((g - c) / a) ** 2 for g, c, a in zip((zz, yy, xx), center, semi))
    tumor = r2 <= 1.0

    tissue = 1.0 + 0.1 * _smooth_field(rng, shape, 3.0)
    texture = _smooth_field(rng, shape, 0.8)
    het = params.heterogeneity[label]

    pre = np.where(tumor, params.tumor_pre, params.dce_level * tissue)
    dce = [pre]
    for bg_mult, t_mult in zip(params.background_post, params.post_multipliers[label]):
        post = np.where(tumor, params.tumor_pre * t_mult * (1.0 + het * texture), pre * bg_mult)
        dce.append(post)
    dce = np.stack(dce) + noise * params.dce_level * rng.standard_normal((4,) + shape)

    tumor_adc = max(rng.normal(params.tumor_adc_mean[label], params.tumor_adc_std), 1e-4)
    adc_true = np.where(tumor, tumor_adc, params.background_adc * (1.0 + 0.05 * _smooth_field(rng, shape, 3.0)))
    s0 = params.s0_level * tissue
    dwi = np.stack([s0 * np.exp(-b * adc_true) for b in B_VALUES])
    dwi = dwi + noise * params.s0_level * rng.standard_normal(dwi.shape)
    adc = adc_channels(dwi)

    sp = params.spacing_mm
    return Subject(
        subject_id if subject_id is not None else f"seed{seed}_label{label}",
        Volume(dce, sp, "DCE"),
        Volume(adc, sp, "ADC"),
        Mask(tumor.astype(np.uint8), sp),
        label,
        extras={"tumor_adc": tumor_adc, "adc_true": adc_true, "dwi": dwi},
    )


def subject_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def generate_dataset(n: int, prevalence: float = DEFAULT_PREVALENCE, seed: int = 0, out_dir=".",
                     dims=DEFAULT_DIMS, noise: float = 0.02) -> list[ManifestRow]:
    """Write ``n`` phantoms plus ``manifest.csv`` under ``out_dir``."""
    if not 0 < prevalence < 1:
        raise DataError(f"prevalence must lie in (0, 1), got {prevalence}")
    if n < 1:
        raise DataError("need at least one subject")
    n_pos = int(np.floor(n * prevalence + 0.5))
    labels = np.zeros(n, dtype=int)
    labels[:n_pos] = 1
    labels = np.random.default_rng(seed).permutation(labels)

    out = Path(out_dir)
    (out / "subjects").mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(n - 1)))
    rows = []
    for i, label in enumerate(labels):
        sid = f"S{i:0{width}d}"
        subj = generate_subject(subject_seed(seed, i), int(label), dims, noise, subject_id=sid)
        rel = {k: f"subjects/{sid}_{k}.rvol" for k in ("dce", "adc", "mask")}
        write_volume(out / rel["dce"], subj.dce)
        write_volume(out / rel["adc"], subj.adc)
        write_volume(out / rel["mask"], subj.mask)
        rows.append(ManifestRow(sid, rel["dce"], rel["adc"], rel["mask"], int(label)))
    write_manifest(out / "manifest.csv", rows)
    return rows
