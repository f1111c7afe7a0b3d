"""Binary checkpoint format.

::

    b"GLNC" | u32 version | u32 entry count
    per entry: u16 name length | name (utf-8) | u8 rank | u32 extents[rank] | f32le payload
    u32 CRC32 of everything between the header and the checksum

All integers are little-endian. Two reserved entries carry run metadata:
``__config__`` holds the model config as utf-8 JSON bytes (one float per
byte, rank 1) and ``__iteration__`` holds the training step counter as a
rank-0 value.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .model import GLNet, ModelConfig

MAGIC = b"GLNC"
VERSION = 1
CONFIG_KEY = "__config__"
ITERATION_KEY = "__iteration__"
_HEADER = struct.Struct("<4sII")


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of this version."""


def encode(entries: Dict[str, np.ndarray]) -> bytes:
    body = io.BytesIO()
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} cannot be encoded")
        body.write(struct.pack("<H", len(raw)))
        body.write(raw)
        body.write(struct.pack("<B", arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = body.getvalue()
    return _HEADER.pack(MAGIC, VERSION, len(entries)) + payload + struct.pack("<I", zlib.crc32(payload))


def decode(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < _HEADER.size + 4:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    payload = blob[_HEADER.size:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checksum mismatch: truncated or corrupted payload")
    out: Dict[str, np.ndarray] = {}
    pos = 0
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(payload):
                raise CheckpointError(f"entry {name!r} runs past the payload")
            out[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"malformed entry table: {exc}") from exc
    if pos != len(payload):
        raise CheckpointError("trailing bytes after the last entry")
    return out


def _config_entry(config: ModelConfig) -> np.ndarray:
    return np.frombuffer(json.dumps(config.to_dict(), sort_keys=True).encode("utf-8"), dtype=np.uint8).astype(np.float32)


def save_checkpoint(model: GLNet, path, iteration: int = 0) -> None:
    entries = dict(model.state_dict())
    entries[CONFIG_KEY] = _config_entry(model.config)
    entries[ITERATION_KEY] = np.float32(iteration)
    Path(path).write_bytes(encode(entries))


def read_checkpoint(path) -> Tuple[ModelConfig, Dict[str, np.ndarray], int]:
    entries = decode(Path(path).read_bytes())
    try:
        raw = entries.pop(CONFIG_KEY).astype(np.uint8).tobytes()
        iteration = int(entries.pop(ITERATION_KEY))
    except KeyError as exc:
        raise CheckpointError(f"missing metadata entry {exc}") from exc
    return ModelConfig.from_dict(json.loads(raw.decode("utf-8"))), entries, iteration


def load_checkpoint(path) -> GLNet:
    config, state, _ = read_checkpoint(path)
    model = GLNet(config)
    model.load_state_dict(state)
    return model
