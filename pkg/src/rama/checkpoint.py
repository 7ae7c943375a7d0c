"""RPAR parameter checkpoints: length-prefixed JSON directory + raw little-endian payload."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch

from .errors import DataError
from .volume import _read_blob, _write_blob

RPAR_MAGIC = "RPAR1"
_DTYPES = {torch.float32: ("f32le", "<f4"), torch.float64: ("f64le", "<f8")}
_NP = {"f32le": "<f4", "f64le": "<f8"}


def save_params(path, state: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, t in state.items():
        tag, npdt = _DTYPES.get(t.dtype, (None, None))
        if tag is None:
            raise ValueError(f"cannot checkpoint tensor {name} of dtype {t.dtype}")
        raw = t.detach().cpu().numpy().astype(npdt).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"magic": RPAR_MAGIC, "tensors": entries, "meta": meta or {}}
    _write_blob(path, header, b"".join(chunks))


def load_params(path) -> tuple["OrderedDict[str, torch.Tensor]", dict]:
    header, payload = _read_blob(path, RPAR_MAGIC)
    entries = header.get("tensors", [])
    total = sum(e["nbytes"] for e in entries)
    if total != len(payload):
        raise DataError(f"{path}: payload length mismatch (expected {total}, got {len(payload)})")
    state = OrderedDict()
    for e in entries:
        a = np.frombuffer(payload, dtype=_NP[e["dtype"]], count=int(np.prod(e["shape"], dtype=int)),
                          offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(a.copy())
    return state, header.get("meta", {})
