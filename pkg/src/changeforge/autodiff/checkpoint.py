"""Checkpoint files: ``<stem>.json`` manifest plus ``<stem>.bin`` float32 payload.

The manifest lists parameter names and shapes in payload order, the optimizer
step count, and any caller metadata under ``"meta"``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ParamStore

_LE_F32 = np.dtype("<f4")


def _paths(path):
    p = Path(path)
    return p.with_suffix(".json"), p.with_suffix(".bin")


def save_checkpoint(params: ParamStore, path, meta: dict | None = None) -> None:
    manifest_path, payload_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "changeforge-checkpoint/1",
        "step": params.step,
        "params": [{"name": k, "shape": list(t.shape)} for k, t in params.items()],
        "meta": meta or {},
    }
    with open(payload_path, "wb") as f:
        for t in params.tensors():
            f.write(np.ascontiguousarray(t.data, dtype=_LE_F32).tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path, dtype=np.float32) -> tuple[ParamStore, dict]:
    """Returns the parameters and the manifest's ``meta`` block."""
    manifest_path, payload_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    raw = payload_path.read_bytes()
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"]) * _LE_F32.itemsize
    if len(raw) != expected:
        raise ValueError(f"{payload_path}: payload is {len(raw)} bytes, manifest implies {expected}")
    store = ParamStore(dtype)
    offset = 0
    for entry in manifest["params"]:
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=offset).reshape(entry["shape"])
        store.add(entry["name"], arr)
        offset += count * _LE_F32.itemsize
    store.step = int(manifest["step"])
    return store, manifest.get("meta", {})
