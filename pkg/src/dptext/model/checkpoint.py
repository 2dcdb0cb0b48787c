"""Checkpoint container: magic, manifest length, JSON manifest, raw float64 blobs.

Layout::

    b"DPTCKPT1" | uint64 LE manifest length | manifest JSON (utf-8) | arrays

The manifest lists ``{"name", "shape", "offset"}`` per array (offsets in
bytes from the start of the array section) plus the model config.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..geometry.io import atomic_write_bytes
from .config import ModelConfig
from .detector import Detector

MAGIC = b"DPTCKPT1"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(state: dict[str, np.ndarray], config: ModelConfig, extra: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"format": 1, "config": config.to_dict(), "arrays": entries, "extra": extra or {}}
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blobs)


def decode_checkpoint(payload: bytes) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    if payload[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (length,) = struct.unpack("<Q", payload[8:16])
    manifest = json.loads(payload[16:16 + length].decode("utf-8"))
    base = 16 + length
    state = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=base + e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return state, ModelConfig.from_dict(manifest["config"]), manifest.get("extra", {})


def save_checkpoint(path, model: Detector, extra: dict | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(model.state_dict(), model.cfg, extra))


def load_checkpoint(path) -> tuple[Detector, dict]:
    state, cfg, extra = decode_checkpoint(Path(path).read_bytes())
    model = Detector(cfg)
    model.load_state_dict(state)
    return model, extra
