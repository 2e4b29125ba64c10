"""Parameter checkpoints: JSON header + flat little-endian float64 payload.

Layout::

    uint64 LE   header length in bytes
    bytes       UTF-8 JSON header {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
    float64 LE  concatenated tensor values, row-major; ``offset`` counts values, not bytes
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError

_LEN = struct.Struct("<Q")


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    entries = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arrays[e["name"]], dtype="<f8").tobytes() for e in entries
    )
    Path(path).write_bytes(_LEN.pack(len(header)) + header + payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _LEN.size:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(raw)
    try:
        header = json.loads(raw[_LEN.size : _LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    values = np.frombuffer(raw, dtype="<f8", offset=_LEN.size + n)
    arrays = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + size > values.size:
            raise CheckpointError(f"{path}: tensor {e['name']} overruns payload")
        arrays[e["name"]] = values[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]
