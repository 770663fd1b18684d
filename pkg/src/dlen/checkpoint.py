"""Checkpoint serialization: a small little-endian binary container.

Layout (all integers little-endian):

    magic   4 bytes  b"DLEN"
    version u32      currently 1
    cfglen  u32      length of the UTF-8 JSON config block
    config  cfglen bytes
    count   u32      number of parameters
    then per parameter, in insertion order:
        namelen u16, name (UTF-8), rank u8, extents rank*u32,
        raw float32 data (C order)

Round trips are bitwise; malformed files are rejected with the byte offset
of the first problem and never produce a partially loaded model.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import DlenConfig, DlenModel, init_params
from .tensor import Tensor

MAGIC = b"DLEN"
VERSION = 1


class CheckpointError(ValueError):
    """The file is not a valid checkpoint of a supported version."""


def save_checkpoint(model: DlenModel, path) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        data = np.ascontiguousarray(p.data, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.raw):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} "
                f"at byte offset {self.off}")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> DlenModel:
    raw = Path(path).read_bytes()
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic at byte offset 0 in {path}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} at byte offset 4")
    cfglen = r.u32("config length")
    try:
        cfg_dict = json.loads(r.take(cfglen, "config block").decode("utf-8"))
        config = DlenConfig.from_dict(cfg_dict)
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"malformed config block at byte offset 12: {exc}")
    count = r.u32("parameter count")
    loaded: dict = {}
    for _ in range(count):
        namelen = struct.unpack("<H", r.take(2, "name length"))[0]
        name = r.take(namelen, "parameter name").decode("utf-8")
        rank = r.take(1, "rank")[0]
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, "extents"))
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(4 * size, f"data of {name}"), dtype="<f4")
        loaded[name] = data.reshape(shape).astype(np.float32)
    if r.off != len(raw):
        raise CheckpointError(
            f"{len(raw) - r.off} trailing bytes at byte offset {r.off}")
    # Rebuild the skeleton from the config so the parameter set is validated,
    # then overwrite every tensor with the stored values.
    model = init_params(config, seed=0)
    if set(model.params) != set(loaded):
        missing = sorted(set(model.params) ^ set(loaded))
        raise CheckpointError(f"parameter set mismatch for this config: {missing[:5]}")
    for name, arr in loaded.items():
        p = model.params[name]
        if p.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {arr.shape} vs config {p.shape}")
        p.data = arr.astype(p.data.dtype)
    return model
