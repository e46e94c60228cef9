"""Versioned binary checkpoint: JSON header + raw named tensors."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import ValidationError
from .config import ModelConfig
from .network import Recognizer

MAGIC = b"AHTC"
VERSION = 1


def save_checkpoint(
    model: Recognizer, path: str | Path, meta: dict | None = None
) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy()
        blob = np.ascontiguousarray(arr).tobytes()
        tensors.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "config": model.cfg.to_json(),
            "tensors": tensors,
            "meta": meta or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str | Path) -> tuple[Recognizer, dict]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        body = f.read()
    cfg = ModelConfig.from_json(header["config"])
    model = Recognizer(cfg)
    state = {}
    for t in header["tensors"]:
        raw = body[t["offset"] : t["offset"] + t["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
        state[t["name"]] = torch.from_numpy(arr)
    missing = model.load_state_dict(state, strict=True)
    if missing.missing_keys or missing.unexpected_keys:
        raise ValidationError("checkpoint tensors do not match the model")
    return model, header["meta"]
