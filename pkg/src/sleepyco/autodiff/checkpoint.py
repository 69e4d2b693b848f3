"""Checkpoint files: a JSON manifest plus a sibling little-endian float64 payload.

Manifest layout::

    {"format": "sleepyco-checkpoint", "version": 1, "dtype": "float64",
     "byte_order": "little", "payload": "<stem>.bin",
     "tensors": [{"name": ..., "shape": [...], "offset": ..., "nbytes": ...}],
     "meta": {...}}
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

FORMAT_TAG = "sleepyco-checkpoint"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: Dict[str, np.ndarray], meta: Optional[dict] = None) -> Path:
    """Write ``state`` to ``<path>.json`` + ``<path>.bin``; returns the manifest path."""
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    manifest_path = path.with_name(path.name + ".json")
    payload_path = path.with_name(path.name + ".bin")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    offset = 0
    with open(payload_path, "wb") as fh:
        for name in sorted(state):
            arr = np.asarray(state[name], dtype=_LE_F64)  # keeps 0-d shapes; tobytes is C-order
            raw = arr.tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            fh.write(raw)
            offset += len(raw)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "payload": payload_path.name,
        "tensors": entries,
        "meta": meta or {},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path.with_name(path.name + ".json")
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{manifest_path}: not a {FORMAT_TAG} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{manifest_path}: unsupported version {manifest.get('version')}")
    if manifest.get("dtype") != "float64" or manifest.get("byte_order") != "little":
        raise CheckpointError(f"{manifest_path}: expected little-endian float64 payload")
    blob = (manifest_path.parent / manifest["payload"]).read_bytes()
    state = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(f"{manifest_path}: payload truncated at {entry['name']}")
        arr = np.frombuffer(blob, dtype=_LE_F64, count=n // 8, offset=start)
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return state, manifest.get("meta", {})
