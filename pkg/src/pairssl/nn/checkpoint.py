"""Versioned flat checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"PSSLCKPT"
    offset 8   u32       format version (currently 1)
    offset 12  u32       reserved, zero
    offset 16  u64       manifest length M in bytes
    offset 24  M bytes   manifest, UTF-8 JSON
    ...        pad       zero bytes up to the next multiple of 8
    payload    raw little-endian float64 arrays, back to back, C order

The manifest holds ``meta`` (free-form JSON: config digest, step, RNG and
sampler state, ...) and ``arrays``: a list of ``{name, shape, dtype, offset,
nbytes}`` where ``offset`` counts from the start of the payload. See
``docs/checkpoint_format.md``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import DataFormatError

MAGIC = b"PSSLCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


@dataclass
class Checkpoint:
    meta: dict[str, Any]
    arrays: dict[str, np.ndarray]


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> Path:
    """Write atomically: a temp file in the same directory is renamed over ``path``."""
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f8", "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes(order="C"))
        offset += a.nbytes
    manifest = json.dumps({"meta": dict(meta), "arrays": entries}, sort_keys=True).encode("utf-8")
    pad = (-(_HEADER.size + len(manifest))) % 8
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, len(manifest)))
        fh.write(manifest)
        fh.write(b"\0" * pad)
        for b in blobs:
            fh.write(b)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: too short for a checkpoint header")
    magic, version, _, mlen = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    end = _HEADER.size + mlen
    try:
        manifest = json.loads(raw[_HEADER.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable manifest ({exc})") from exc
    base = end + (-end) % 8
    arrays = {}
    for e in manifest["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise DataFormatError(f"{path}: array {e['name']} runs past end of file")
        a = np.frombuffer(raw, dtype=e["dtype"], count=e["nbytes"] // 8, offset=start)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return Checkpoint(manifest["meta"], arrays)
