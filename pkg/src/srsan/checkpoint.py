"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"SRSAN\\0"  version
    len  config JSON (utf-8)        -- {"model": ..., "run": ...}
    n_items, then per item: len  raw id (utf-8)
    n_tensors, then per tensor: ndim  dims...  float32 data (little-endian)
    sha256 of every preceding byte (32 bytes)

Tensors appear in ``model.param_names`` order.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Vocabulary
from .model import ModelConfig, Params, param_names, param_shapes

MAGIC = b"SRSAN\0"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    params: Params
    run_config: dict = field(default_factory=dict)


def _put_bytes(buf: io.BytesIO, data: bytes) -> None:
    buf.write(_U32.pack(len(data)))
    buf.write(data)


def dumps(ckpt: Checkpoint) -> bytes:
    config = ckpt.config
    if len(ckpt.vocab) != config.vocab_size:
        raise CheckpointError(f"vocabulary has {len(ckpt.vocab)} items, config says {config.vocab_size}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_U32.pack(VERSION))
    meta = {"model": config.to_dict(), "run": ckpt.run_config}
    _put_bytes(buf, json.dumps(meta, sort_keys=True).encode())
    buf.write(_U32.pack(len(ckpt.vocab)))
    for raw in ckpt.vocab.ids[1:]:
        _put_bytes(buf, raw.encode())
    names = param_names(config)
    buf.write(_U32.pack(len(names)))
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        buf.write(_U32.pack(arr.ndim))
        for dim in arr.shape:
            buf.write(_U32.pack(dim))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def loads(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 + 32 or not data.startswith(MAGIC):
        raise CheckpointError("not an SRSAN checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(r.take(r.u32()).decode())
    config = ModelConfig.from_dict(meta["model"])
    n_items = r.u32()
    vocab = Vocabulary.from_ids([r.take(r.u32()).decode() for _ in range(n_items)])
    if len(vocab) != config.vocab_size:
        raise CheckpointError("vocabulary size does not match config")
    shapes = param_shapes(config)
    n_tensors = r.u32()
    if n_tensors != len(shapes):
        raise CheckpointError(f"expected {len(shapes)} tensors, found {n_tensors}")
    params = {}
    for name in param_names(config):
        shape = tuple(r.u32() for _ in range(r.u32()))
        if shape != shapes[name]:
            raise CheckpointError(f"tensor {name} has shape {shape}, expected {shapes[name]}")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensors")
    return Checkpoint(config, vocab, params, meta.get("run", {}))


def save(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
