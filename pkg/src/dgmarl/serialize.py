"""Flat binary parameter checkpoints with JSON headers."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointError


def save_arrays(path: str, arrays: list[np.ndarray]) -> None:
    """Concatenated float64 little-endian, row-major, in list order."""
    flat = np.concatenate([np.asarray(a, dtype="<f8").ravel() for a in arrays]) \
        if arrays else np.zeros(0, dtype="<f8")
    flat.astype("<f8").tofile(path)


def load_arrays(path: str, shapes: list[list[int]]) -> list[np.ndarray]:
    if not os.path.exists(path):
        raise CheckpointError(f"missing checkpoint file {path}")
    raw = np.fromfile(path, dtype="<f8")
    want = int(sum(int(np.prod(s)) for s in shapes))
    if raw.size != want:
        raise CheckpointError(
            f"corrupt checkpoint {path}: {raw.size} scalars, expected {want}")
    out = []
    lo = 0
    for s in shapes:
        size = int(np.prod(s))
        out.append(raw[lo:lo + size].reshape([int(x) for x in s]).astype(np.float64))
        lo += size
    return out


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise CheckpointError(f"missing metadata file {path}")
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt metadata {path}: {e}") from e
