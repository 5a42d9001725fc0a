"""Versioned binary checkpoint format.

Layout, little-endian throughout:
  magic "SQAL" | u32 version | u32 json_len | spec+meta JSON (UTF-8)
  | u32 tensor_count | per tensor: u32 name_len, name, u8 dtype (0 = f32),
  u32 rank, u32 dims[rank], raw payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CheckpointError, InvalidInput
from .model import Model, build_model

MAGIC = b"SQAL"
VERSION = 1
_DTYPE_F32 = 0


def _named_tensors(model: Model) -> list:
    return model.parameters() + model.state_tensors()


def save_checkpoint(model: Model, path: str, meta: dict | None = None) -> None:
    header = model.spec_dict()
    header["meta"] = dict(meta or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tensors = _named_tensors(model)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BI", _DTYPE_F32, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def load_checkpoint(path: str, dtype=np.float32):
    """Rebuild the model and return (model, meta)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (jlen,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            header = json.loads(_read_exact(f, jlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}") from e
        try:
            model = build_model(header, dtype=dtype)
        except (InvalidInput, KeyError, TypeError) as e:
            raise CheckpointError(f"cannot rebuild model: {e}") from e
        slots = dict(_named_tensors(model))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            dcode, rank = struct.unpack("<BI", _read_exact(f, 5))
            if dcode != _DTYPE_F32:
                raise CheckpointError(f"unknown tensor dtype code {dcode}")
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            n_elem = int(np.prod(dims)) if dims else 1
            raw = _read_exact(f, 4 * n_elem)
            if name not in slots:
                raise CheckpointError(f"unexpected tensor {name!r}")
            target = slots[name]
            if tuple(dims) != target.shape:
                raise CheckpointError(
                    f"tensor {name!r} shape {dims} does not match {target.shape}")
            target[:] = np.frombuffer(raw, dtype="<f4").reshape(dims)
            seen.add(name)
        missing = set(slots) - seen
        if missing:
            raise CheckpointError(f"missing tensors: {sorted(missing)}")
    return model, header.get("meta", {})
