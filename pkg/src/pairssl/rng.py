"""Named, counter-based random streams.

Every consumer of randomness (init, batch order, each augmentation) owns its own
Philox stream derived from ``(seed, name)``, so adding or skipping draws in one
consumer never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAM_NAMES = ("init", "labeled_order", "unlabeled_order", "weak_labeled", "weak_unlabeled", "strong")


def make_stream(seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.Generator(np.random.Philox(ss))


def make_streams(seed: int, names=STREAM_NAMES) -> dict[str, np.random.Generator]:
    return {n: make_stream(seed, n) for n in names}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def stream_state(gen: np.random.Generator) -> dict:
    return _jsonable(gen.bit_generator.state)


def restore_stream(state: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = _from_jsonable(state)
    return np.random.Generator(bg)
