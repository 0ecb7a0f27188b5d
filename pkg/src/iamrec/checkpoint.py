"""Checkpoint files.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then the raw
little-endian float64 payload.  The header holds the model config, frozen
names, LoRA settings, free-form metadata, and a tensor directory with shapes
and byte offsets relative to the start of the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import LoraConfig, ModelConfig, ModelParameters

FORMAT = "iamrec-checkpoint"
VERSION = 1
_LE_F64 = np.dtype("<f8")


def save_checkpoint(path, params: ModelParameters, config: ModelConfig, meta: dict | None = None) -> None:
    directory, chunks, offset = [], [], 0
    for name, arr in params.tensors.items():
        buf = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "config": config.to_dict(),
        "frozen": sorted(params.frozen),
        "lora": None if params.lora is None else vars(params.lora).copy(),
        "meta": meta or {},
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for buf in chunks:
            fh.write(buf)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        (size,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(size).decode("utf-8"))


def load_checkpoint(path) -> tuple[ModelParameters, ModelConfig, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (size,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + size].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not an {FORMAT} file")
    payload = memoryview(raw)[8 + size :]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise ValueError(f"{path}: payload too short for tensor {entry['name']}")
        arr = np.frombuffer(payload[start : start + n], dtype=_LE_F64).astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    lora = None if header["lora"] is None else LoraConfig(**header["lora"])
    params = ModelParameters(tensors, frozenset(header["frozen"]), lora)
    return params, ModelConfig.from_dict(header["config"]), header["meta"]
