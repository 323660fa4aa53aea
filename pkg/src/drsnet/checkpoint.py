"""Single-file model archive.

Layout (all integers little-endian)::

    magic        8 bytes   b"DRSNETCK"
    version      u16       FORMAT_VERSION
    header_len   u32
    header       header_len bytes of UTF-8 JSON:
                 {"config": NetworkConfig.to_dict(), "metadata": {...}}
    n_tensors    u32
    n_tensors times:
        name_len  u16, name (UTF-8)
        dtype_len u8,  dtype (numpy name, e.g. "float32")
        ndim      u8,  shape (ndim x u64)
        nbytes    u64, data (row-major, little-endian)

Tensors are the full ``state_dict``: parameters and BatchNorm buffers.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import DRSNet, NetworkConfig

MAGIC = b"DRSNETCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: DRSNet, path, metadata: dict | None = None) -> None:
    header = json.dumps({"config": model.cfg.to_dict(), "metadata": metadata or {}},
                        sort_keys=True).encode()
    state = model.state_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy())
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            name_b, dtype_b = name.encode(), arr.dtype.name.encode()
            fh.write(struct.pack("<H", len(name_b)) + name_b)
            fh.write(struct.pack("<B", len(dtype_b)) + dtype_b)
            fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            data = arr.tobytes(order="C")
            fh.write(struct.pack("<Q", len(data)) + data)


def _read(fh, fmt: str):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, buf)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (header, tensors) without building a model."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a DRSNet checkpoint")
        version, header_len = _read(fh, "<HI")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        (count,) = _read(fh, "<I")
        tensors = {}
        for _ in range(count):
            (n,) = _read(fh, "<H")
            name = fh.read(n).decode()
            (n,) = _read(fh, "<B")
            dtype = np.dtype(fh.read(n).decode()).newbyteorder("<")
            (ndim,) = _read(fh, "<B")
            shape = _read(fh, f"<{ndim}Q") if ndim else ()
            (nbytes,) = _read(fh, "<Q")
            data = fh.read(nbytes)
            if len(data) != nbytes:
                raise CheckpointError("truncated checkpoint")
            tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return header, tensors


def load_checkpoint(path, map_location="cpu") -> tuple[DRSNet, dict]:
    header, tensors = read_checkpoint(path)
    model = DRSNet(NetworkConfig.from_dict(header["config"]))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state, strict=True)
    return model.to(map_location).eval(), header.get("metadata", {})
