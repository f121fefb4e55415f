"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes  b"VSWM"
    version    u32      FORMAT_VERSION
    config     u32 length + UTF-8 JSON of the NetworkConfig
    n_tensors  u32
    tensor     u16 name length + UTF-8 name,
               u8 ndim, ndim x u32 dims,
               float64 little-endian data (C order)

Tensors are the network parameters, ``target_mean``/``target_std`` and,
optionally, ``adam.step``, ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import CheckpointError
from .network import Network, NetworkConfig, param_shapes
from .optim import OptimizerState

MAGIC = b"VSWM"
FORMAT_VERSION = 1


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def save_checkpoint(net: Network, path, optimizer: Optional[OptimizerState] = None) -> None:
    tensors = dict(net.params)
    tensors["target_mean"] = net.target_mean
    tensors["target_std"] = net.target_std
    if optimizer is not None:
        tensors["adam.step"] = np.array([float(optimizer.step)])
        for k in net.params:
            tensors[f"adam.m/{k}"] = optimizer.m[k]
            tensors[f"adam.v/{k}"] = optimizer.v[k]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, with_optimizer: bool = False):
    """Load a network (and the optimizer state when requested and present)."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {magic!r}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (clen,) = r.unpack("<I")
    try:
        config = NetworkConfig(**json.loads(r.take(clen).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.pos} trailing bytes after tensor table")

    shapes = param_shapes(config)
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != tuple(shape):
            raise CheckpointError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
        params[name] = tensors[name]
    for name in ("target_mean", "target_std"):
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
    net = Network(config, params, tensors["target_mean"], tensors["target_std"])
    if not with_optimizer:
        return net
    opt = None
    if "adam.step" in tensors:
        opt = OptimizerState(
            {k: tensors[f"adam.m/{k}"] for k in shapes},
            {k: tensors[f"adam.v/{k}"] for k in shapes},
            int(tensors["adam.step"][0]),
        )
    return net, opt
