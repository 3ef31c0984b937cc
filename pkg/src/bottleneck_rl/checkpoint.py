"""Versioned structured-text checkpoints for network parameters.

A checkpoint is a JSON document listing every parameter tensor with its
name, shape, and full-precision decimal values (Python float repr round
trips IEEE doubles exactly).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "tensors": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in tensors.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_tensors(
    path: str | Path,
    expected: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Load a checkpoint; with `expected`, validate names and shapes.

    A mismatch raises CheckpointError naming the offending tensor.
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')}")
    tensors = {}
    for name, entry in doc["tensors"].items():
        arr = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        tensors[name] = arr
    if expected is not None:
        for name, ref in expected.items():
            if name not in tensors:
                raise CheckpointError(f"checkpoint missing tensor {name}")
            if tensors[name].shape != ref.shape:
                raise CheckpointError(
                    f"shape mismatch for tensor {name}: checkpoint "
                    f"{tensors[name].shape} vs expected {ref.shape}"
                )
        for name in tensors:
            if name not in expected:
                raise CheckpointError(f"unexpected tensor {name} in checkpoint")
    return tensors


def assign_tensors(target: dict[str, np.ndarray], loaded: dict[str, np.ndarray]) -> None:
    for name, arr in target.items():
        arr[...] = loaded[name]
