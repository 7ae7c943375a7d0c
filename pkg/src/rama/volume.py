"""Volume/mask containers, the RVOL binary format and the dataset manifest."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MODALITIES = ("DCE", "ADC", "DWI", "OTHER")
RVOL_MAGIC = "RVOL1"
MANIFEST_COLUMNS = ["subject_id", "dce_path", "adc_path", "mask_path", "label"]


@dataclass
class Volume:
    """Multi-channel 3D scalar field.

    ``data`` has shape ``(C, D, H, W)`` so that the flat C-order index is
    ``((c*D + z)*H + y)*W + x``. ``dims`` is reported as ``(W, H, D)``.
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: str = "OTHER"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4:
            raise DataError(f"volume data must be 4D (C, D, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite values")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise DataError(f"spacing must be three positive values, got {self.spacing_mm}")
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        self.data = data

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        _, d, h, w = self.data.shape
        return (w, h, d)

    def channel(self, index: int) -> np.ndarray:
        if not 0 <= index < self.channels:
            raise DataError(f"channel {index} out of range for {self.channels}-channel volume")
        return self.data[index]


@dataclass
class Mask:
    """Binary single-channel ROI, shape ``(D, H, W)``."""

    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 4 and data.shape[0] == 1:
            data = data[0]
        if data.ndim != 3:
            raise DataError(f"mask data must be 3D (D, H, W), got shape {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise DataError("mask values must be 0 or 1")
        self.data = data.astype(np.uint8)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise DataError(f"spacing must be three positive values, got {self.spacing_mm}")

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (w, h, d)

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def bool(self) -> np.ndarray:
        return self.data.astype(bool)


@dataclass
class Subject:
    id: str
    dce: Volume
    adc: Volume
    mask: Mask
    label: int
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.dce.channels != 4 or self.adc.channels != 4:
            raise DataError(f"subject {self.id}: DCE and ADC must have 4 channels")
        if self.mask.count < 1:
            raise DataError(f"subject {self.id}: empty mask")
        if self.label not in (0, 1):
            raise DataError(f"subject {self.id}: label must be 0 or 1, got {self.label}")

    def volume(self, modality: str) -> Volume:
        if modality == "DCE":
            return self.dce
        if modality == "ADC":
            return self.adc
        raise DataError(f"subject has no {modality!r} volume")


def _write_blob(path, header: dict, payload: bytes) -> None:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(payload)


def _read_blob(path, magic: str) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: file too short")
    (n,) = struct.unpack("<Q", raw[:8])
    if 8 + n > len(raw):
        raise DataError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed header: {e}") from None
    if header.get("magic") != magic:
        raise DataError(f"{path}: header magic mismatch (expected {magic}, got {header.get('magic')!r})")
    return header, raw[8 + n :]


def write_volume(path, vol: Volume | Mask) -> None:
    if isinstance(vol, Mask):
        header = {"magic": RVOL_MAGIC, "dtype": "u8", "channels": 1, "dims": list(vol.dims),
                  "spacing_mm": list(vol.spacing_mm), "modality": "MASK"}
        payload = vol.data.astype("u1").tobytes()
    else:
        header = {"magic": RVOL_MAGIC, "dtype": "f32le", "channels": vol.channels,
                  "dims": list(vol.dims), "spacing_mm": list(vol.spacing_mm),
                  "modality": vol.modality}
        payload = vol.data.astype("<f4").tobytes()
    _write_blob(path, header, payload)


def read_volume(path) -> Volume | Mask:
    header, payload = _read_blob(path, RVOL_MAGIC)
    try:
        c = int(header["channels"])
        w, h, d = (int(v) for v in header["dims"])
        spacing = tuple(header["spacing_mm"])
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: incomplete header: {e}") from None
    itemsize = {"f32le": 4, "u8": 1}.get(dtype)
    if itemsize is None:
        raise DataError(f"{path}: unsupported dtype {dtype!r}")
    if len(payload) != c * w * h * d * itemsize:
        raise DataError(f"{path}: payload length mismatch "
                        f"(expected {c * w * h * d * itemsize}, got {len(payload)})")
    if dtype == "u8":
        return Mask(np.frombuffer(payload, dtype="u1").reshape(d, h, w).copy(), spacing)
    data = np.frombuffer(payload, dtype="<f4").reshape(c, d, h, w).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values in payload")
    return Volume(data, spacing, header.get("modality", "OTHER"))


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    dce_path: str
    adc_path: str
    mask_path: str
    label: int


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow([r.subject_id, r.dce_path, r.adc_path, r.mask_path, r.label])


def read_manifest(path) -> list[ManifestRow]:
    """Read a manifest CSV; relative paths resolve against its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.csv"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise DataError(f"{path}: expected columns {MANIFEST_COLUMNS}, got {reader.fieldnames}")
        rows = []
        seen = set()
        for rec in reader:
            sid = rec["subject_id"]
            if sid in seen:
                raise DataError(f"{path}: duplicate subject id {sid!r}")
            seen.add(sid)
            if rec["label"] not in ("0", "1"):
                raise DataError(f"{path}: subject {sid}: label must be 0 or 1")
            paths = []
            for key in ("dce_path", "adc_path", "mask_path"):
                p = Path(rec[key])
                if not p.is_absolute():
                    p = path.parent / p
                if not p.exists():
                    raise DataError(f"{path}: subject {sid}: missing file {p}")
                paths.append(str(p))
            rows.append(ManifestRow(sid, *paths, int(rec["label"])))
    return rows


def load_subject(row: ManifestRow) -> Subject:
    dce, adc, mask = read_volume(row.dce_path), read_volume(row.adc_path), read_volume(row.mask_path)
    if not isinstance(mask, Mask) or isinstance(dce, Mask) or isinstance(adc, Mask):
        raise DataError(f"subject {row.subject_id}: wrong file kinds in manifest row")
    if not (dce.dims == adc.dims == mask.dims):
        raise DataError(f"subject {row.subject_id}: DCE/ADC/mask dims disagree")
    return Subject(row.subject_id, dce, adc, mask, row.label)
