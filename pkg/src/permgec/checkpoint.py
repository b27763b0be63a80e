"""Versioned binary checkpoints: JSON header plus raw little-endian tensors.

Layout: 4-byte magic, u32 version, u64 header length, UTF-8 JSON header,
then the tensor payload.  The header lists every tensor (name, shape,
section) in write order; sections cover model parameters and the two
optimizer moment buffers.  Tensors are written in parameter declaration
order as 64-bit little-endian floats.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig
from .optim import AdamW

MAGIC = b"PGC1"
VERSION = 1


@dataclass
class CheckpointData:
    model: Model
    optimizer: AdamW | None
    extra: dict


def save_checkpoint(
    path: str | Path,
    model: Model,
    optimizer: AdamW | None = None,
    extra: dict | None = None,
) -> None:
    tensors: list[tuple[str, str, np.ndarray]] = []
    for name, arr in model.params.items():
        tensors.append(("param", name, arr))
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            tensors.append(("m", name, arr))
        for name, arr in optimizer.v.items():
            tensors.append(("v", name, arr))

    header = {
        "model_config": model.cfg.to_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
        "tensors": [
            {"section": sec, "name": name, "shape": list(arr.shape)}
            for sec, name, arr in tensors
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> CheckpointData:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        sections: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            sections[spec["section"]][spec["name"]] = data.astype(float)

    cfg = ModelConfig(**header["model_config"])
    model = Model(cfg=cfg, params=sections["param"])
    optimizer = None
    if header["optimizer"] is not None:
        optimizer = AdamW(model.params)
        optimizer.load_state(header["optimizer"], sections["m"], sections["v"])
    return CheckpointData(model=model, optimizer=optimizer, extra=header["extra"])


def export_json(path: str | Path, model: Model) -> None:
    """Debug dump: config plus every parameter tensor as nested lists."""
    payload = {
        "model_config": model.cfg.to_dict(),
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")
