"""Checkpoint container: ``.npz`` archive of little-endian parameter arrays.

Each parameter is stored under its dotted name with its shape; two reserved
entries carry the format version and a JSON metadata string.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

FORMAT_VERSION = 1
_VERSION_KEY = "__format_version__"
_META_KEY = "__meta__"


def save_checkpoint(path, params: Dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, arr in params.items():
        if name.startswith("__"):
            raise ValueError(f"reserved parameter name {name!r}")
        arr = np.asarray(arr)
        arrays[name] = arr.astype(arr.dtype.newbyteorder("<"))
    arrays[_VERSION_KEY] = np.asarray(FORMAT_VERSION, dtype="<i4")
    arrays[_META_KEY] = np.asarray(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        if _VERSION_KEY not in z.files:
            raise ValueError(f"{path}: not a checkpoint (no format version)")
        version = int(z[_VERSION_KEY])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(str(z[_META_KEY]))
        params = {k: z[k].copy() for k in z.files if not k.startswith("__")}
    return params, meta
