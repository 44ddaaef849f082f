"""ADCM model checkpoints: little-endian header followed by float64 parameters."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from adc._io import atomic_write
from adc.nn.model import Model

MAGIC = b"ADCM"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def encode_checkpoint(model: Model) -> bytes:
    model.validate()
    head = _HEADER.pack(MAGIC, VERSION, model.input_size, model.hidden_size, model.n_classes)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.arrays())
    return head + body


def decode_checkpoint(data: bytes) -> Model:
    if len(data) < _HEADER.size:
        raise ValueError("truncated checkpoint header")
    magic, version, I, H, C = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    shapes = [(4 * H, I), (4 * H, H), (4 * H,)] * 2 + [(C, 2 * H), (C,)]
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != need:
        raise ValueError(f"checkpoint is {len(data)} bytes, expected {need}")
    off = _HEADER.size
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy())
        off += 8 * count
    return Model.from_arrays(arrays)


def save_checkpoint(path: str | Path, model: Model) -> None:
    atomic_write(path, encode_checkpoint(model))


def load_checkpoint(path: str | Path) -> Model:
    return decode_checkpoint(Path(path).read_bytes())
