"""Binary model checkpoints.

Layout, all little-endian:

    b"SHSM"                      magic
    u32 version                  currently 1
    u32 L, h, d, d_ff, S, M, N_c
    f64 dropout
    tensors                      float64, in ``param_names`` order, row-major
    u8  has_stats                1 if normalization statistics follow
    f64[M] mean, f64[M] std      only when has_stats
    32 bytes                     fingerprint of the training dataset (zeros if unknown)
    32 bytes                     SHA-256 of every preceding byte
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, TransformerParams, param_names, param_shapes

MAGIC = b"SHSM"
VERSION = 1
_HEAD = struct.Struct("<4sI7Id")


class CheckpointFormatError(ValueError):
    pass


@dataclass(eq=False)
class Checkpoint:
    params: TransformerParams
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    fingerprint: bytes = bytes(32)

    @property
    def config(self) -> ModelConfig:
        return self.params.cfg

    def normalize(self, z: np.ndarray) -> np.ndarray:
        if self.mean is None or self.std is None:
            raise ValueError("checkpoint carries no normalization statistics")
        return (np.asarray(z, dtype=float) - self.mean) / self.std


def encode(ckpt: Checkpoint) -> bytes:
    c = ckpt.config
    if len(ckpt.fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    parts = [_HEAD.pack(MAGIC, VERSION, c.L, c.h, c.d, c.d_ff, c.S, c.M, c.N_c, c.dropout)]
    for name in param_names(c):
        parts.append(np.ascontiguousarray(ckpt.params[name], dtype="<f8").tobytes())
    if ckpt.mean is not None:
        mean = np.asarray(ckpt.mean, dtype="<f8").reshape(-1)
        std = np.asarray(ckpt.std, dtype="<f8").reshape(-1)
        if mean.size != c.M or std.size != c.M:
            raise ValueError("normalization statistics must have M entries")
        parts += [b"\x01", mean.tobytes(), std.tobytes()]
    else:
        parts.append(b"\x00")
    parts.append(bytes(ckpt.fingerprint))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointFormatError("not a model checkpoint (bad magic)")
    if len(blob) < _HEAD.size:
        raise CheckpointFormatError("truncated checkpoint header")
    _, version, L, h, d, d_ff, S, M, N_c, dropout = _HEAD.unpack_from(blob)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    body, digest = blob[:-32], blob[-32:]
    try:
        cfg = ModelConfig(L=L, h=h, d=d, d_ff=d_ff, dropout=dropout, S=S, M=M, N_c=N_c)
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid model config: {exc}") from None
    shapes = param_shapes(cfg)
    n_param = sum(int(np.prod(s)) for s in shapes.values())
    minimum = _HEAD.size + 8 * n_param + 1 + 32 + 32
    if len(blob) < minimum:
        raise CheckpointFormatError(f"truncated checkpoint: {len(blob)} bytes, need at least {minimum}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointFormatError("checkpoint content hash mismatch")
    pos = _HEAD.size
    tensors = {}
    for name in param_names(cfg):
        count = int(np.prod(shapes[name]))
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shapes[name]).astype(np.float64)
        pos += 8 * count
    flag = blob[pos]
    pos += 1
    mean = std = None
    if flag == 1:
        if len(body) < pos + 16 * M + 32:
            raise CheckpointFormatError("truncated normalization block")
        mean = np.frombuffer(blob, dtype="<f8", count=M, offset=pos).astype(np.float64)
        std = np.frombuffer(blob, dtype="<f8", count=M, offset=pos + 8 * M).astype(np.float64)
        pos += 16 * M
    elif flag != 0:
        raise CheckpointFormatError("bad normalization flag")
    fingerprint = blob[pos:pos + 32]
    pos += 32
    if pos != len(body):
        raise CheckpointFormatError("unexpected trailing bytes")
    return Checkpoint(TransformerParams(cfg, tensors), mean, std, bytes(fingerprint))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(encode(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
