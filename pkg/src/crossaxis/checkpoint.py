"""Binary checkpoint format (little-endian).

    b"CATCKPT1"                      magic
    u32 version                      currently 1
    u32 tensor count
    per tensor:
        u16 name length, name (UTF-8)
        u8 dtype code (0 = f32, 1 = f64)
        u8 rank, rank x u64 dims
        raw row-major data
    u32 config length, config JSON (UTF-8, sorted keys)
    u64 step

Optimizer moments are stored as ordinary tensors named ``opt.m.<param>`` and
``opt.v.<param>``; the optimizer step counter equals ``step``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadMagic, ShapeMismatch, TruncatedFile, VersionMismatch

MAGIC = b"CATCKPT1"
VERSION = 1
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
M_PREFIX, V_PREFIX = "opt.m.", "opt.v."


@dataclass
class Checkpoint:
    params: dict
    config: dict
    step: int = 0
    opt_m: dict = field(default_factory=dict)
    opt_v: dict = field(default_factory=dict)

    def tensors(self) -> dict:
        out = dict(self.params)
        out.update({M_PREFIX + k: v for k, v in self.opt_m.items()})
        out.update({V_PREFIX + k: v for k, v in self.opt_v.items()})
        return out


def encode(ckpt: Checkpoint) -> bytes:
    tensors = ckpt.tensors()
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)) + cfg)
    parts.append(struct.pack("<Q", ckpt.step))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, expected_shapes: Optional[dict] = None) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a CAT checkpoint")
    r.take(len(MAGIC))
    version, count = r.unpack("<II")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, reader supports {VERSION}")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise ValueError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q")
        dtype = _DTYPES[code]
        raw = r.take(math.prod(dims) * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    (n,) = r.unpack("<I")
    config = json.loads(r.take(n).decode("utf-8"))
    (step,) = r.unpack("<Q")

    params, m, v = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith(M_PREFIX):
            m[name[len(M_PREFIX):]] = arr
        elif name.startswith(V_PREFIX):
            v[name[len(V_PREFIX):]] = arr
        else:
            params[name] = arr
    if expected_shapes is not None:
        _check_shapes(params, expected_shapes)
    for moments in (m, v):
        for name, arr in moments.items():
            if name not in params or params[name].shape != arr.shape:
                raise ShapeMismatch(f"optimizer moment for {name} does not match its parameter")
    return Checkpoint(params, config, step, m, v)


def _check_shapes(params: dict, expected: dict) -> None:
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeMismatch(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise ShapeMismatch(f"{name}: stored {params[name].shape}, config implies {tuple(shape)}")


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def load_checkpoint(path: str, validate: bool = True) -> Checkpoint:
    """Read a checkpoint; when its config describes a model, shapes are checked against it."""
    with open(path, "rb") as fh:
        ckpt = decode(fh.read())
    if validate:
        shapes = _config_shapes(ckpt.config)
        if shapes is not None:
            _check_shapes(ckpt.params, shapes)
    return ckpt


def _config_shapes(config: dict) -> Optional[dict]:
    from .config import model_config_from_dict
    from .model import param_shapes

    try:
        return param_shapes(model_config_from_dict(config))
    except (TypeError, ValueError):
        return None
