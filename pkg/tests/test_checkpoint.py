import struct
import zlib

import numpy as np
import pytest

from glnet.checkpoint import (CheckpointError, decode, encode, load_checkpoint, read_checkpoint,
                              save_checkpoint)
from glnet.gradcheck import toy_config
from glnet.model import GLNet
from glnet.tensor import Tensor


@pytest.fixture
def model():
    return GLNet(toy_config(seed=11, disable_lcm=True))


def test_round_trip_is_bitwise(tmp_path, model):
    save_checkpoint(model, tmp_path / "a.glnc", iteration=42)
    config, state, it = read_checkpoint(tmp_path / "a.glnc")
    assert it == 42 and config == model.config
    for name, arr in model.state_dict().items():
        assert state[name].tobytes() == arr.tobytes()
    restored = load_checkpoint(tmp_path / "a.glnc")
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (3, 3, 16, 16)).astype(np.float32))
    assert restored(x).data.tobytes() == model(x).data.tobytes()


def test_save_load_save_is_byte_identical(tmp_path, model):
    save_checkpoint(model, tmp_path / "a.glnc", 3)
    save_checkpoint(load_checkpoint(tmp_path / "a.glnc"), tmp_path / "b.glnc", 3)
    assert (tmp_path / "a.glnc").read_bytes() == (tmp_path / "b.glnc").read_bytes()


def test_layout(tmp_path):
    blob = encode({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert blob[:4] == b"GLNC"
    assert struct.unpack("<II", blob[4:12]) == (1, 1)
    body = blob[12:-4]
    assert body[:2] == struct.pack("<H", 1) and body[2:3] == b"w" and body[3] == 2
    assert struct.unpack("<II", body[4:12]) == (2, 3)
    assert np.frombuffer(body[12:], "<f4").tolist() == list(range(6))
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(body)


def test_corruption_is_rejected(tmp_path, model):
    save_checkpoint(model, tmp_path / "a.glnc")
    blob = (tmp_path / "a.glnc").read_bytes()
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode(blob[:4] + struct.pack("<I", 99) + blob[8:])
    with pytest.raises(CheckpointError):
        decode(blob[: len(blob) // 2])
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bytes(flipped))


def test_mismatched_architecture_is_rejected(tmp_path, model):
    save_checkpoint(model, tmp_path / "a.glnc")
    _, state, _ = read_checkpoint(tmp_path / "a.glnc")
    other = GLNet(toy_config())
    with pytest.raises((KeyError, ValueError)):
        other.load_state_dict(state)
