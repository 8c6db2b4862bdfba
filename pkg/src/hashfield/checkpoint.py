"""Checkpoints as a flat binary tensor blob plus a JSON manifest."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np


def _atomic_write(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path_base, tensors: dict, config: dict, step: int):
    """Write ``<path_base>.bin`` and ``<path_base>.json``.

    Tensors are concatenated little-endian in manifest order; the manifest
    records name, shape, dtype and byte offset of each, plus the config
    echo and the training step.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        lit = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = lit.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {"tensors": entries, "config": config, "step": step}
    _atomic_write(str(path_base) + ".bin", b"".join(blobs))
    _atomic_write(str(path_base) + ".json",
                  json.dumps(manifest, indent=1, sort_keys=True).encode())


def load_checkpoint(path_base):
    """Read a checkpoint pair; returns (tensors, config, step)."""
    with open(str(path_base) + ".json") as fh:
        manifest = json.load(fh)
    with open(str(path_base) + ".bin", "rb") as fh:
        blob = fh.read()
    tensors = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(e["shape"])) if e["shape"] else 1,
                            offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return tensors, manifest["config"], manifest["step"]
