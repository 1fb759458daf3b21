"""Tests of the AGT1 codec and the checkpoint archive."""
import os
import struct

import numpy as np
import pytest

from agcd.debias.errors import DataError, TensorFormatError
from agcd.debias.serial import (
    decode_tensor,
    encode_tensor,
    load_archive,
    load_tensor,
    parse_metadata,
    save_archive,
    save_tensor,
)

# pylint: disable=missing-function-docstring


def test_header_layout():
    data = encode_tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert data[:4] == b"AGT1"
    assert data[4] == 1
    assert data[5] == 2
    assert struct.unpack("<2I", data[6:14]) == (2, 3)
    assert len(data) == 14 + 6 * 8
    assert struct.unpack("<d", data[14 + 8:14 + 16]) == (1.0, )


def test_roundtrip_is_bit_exact():
    rng = np.random.default_rng(0)
    for array in (rng.normal(size=(3, 4, 5)).astype(np.float32),
                  rng.normal(size=7), np.zeros((0, 3))):
        decoded = decode_tensor(encode_tensor(array))
        assert decoded.dtype == array.dtype
        assert decoded.tobytes() == array.tobytes()


@pytest.mark.parametrize("data", [
    b"AGT2\x00\x00",
    b"AGT1\x07\x00",
    b"AGT1\x00\x01\x04\x00\x00\x00" + b"\x00" * 8,
    b"AGT1",
])
def test_malformed_records(data):
    with pytest.raises(TensorFormatError):
        decode_tensor(data)


def test_trailing_bytes():
    with pytest.raises(TensorFormatError):
        decode_tensor(encode_tensor(np.zeros(2)) + b"x")


def test_load_names_the_file(tmp_path):
    path = str(tmp_path / "bad.agt")
    save_tensor(path, np.ones(3))
    with open(path, "r+b") as file:
        file.write(b"XXXX")
    with pytest.raises(TensorFormatError) as info:
        load_tensor(path)
    assert info.value.path == path
    assert path in str(info.value)

    with pytest.raises(DataError):
        load_tensor(str(tmp_path / "missing.agt"))


def test_archive_roundtrip(tmp_path):
    path = str(tmp_path / "run.ckpt")
    tensors = {
        "param.head.linear.weight": np.ones((3, 8), dtype=np.float32),
        "adam.m.head.linear.weight": np.zeros((3, 8), dtype=np.float32),
        "scalar": np.array(2.5),
    }
    save_archive(path, tensors, {"step": 12, "config_hash": "abc"})
    loaded, metadata = load_archive(path)
    assert list(loaded) == list(tensors)
    for name, array in tensors.items():
        assert loaded[name].tobytes() == array.tobytes()
    assert metadata == {"step": "12", "config_hash": "abc"}
    assert not os.path.exists(path + ".tmp")


def test_truncated_archive(tmp_path):
    path = str(tmp_path / "run.ckpt")
    save_archive(path, {"w": np.ones(10)}, {"step": 1})
    with open(path, "rb") as file:
        data = file.read()
    with open(path, "wb") as file:
        file.write(data[:30])
    with pytest.raises(TensorFormatError):
        load_archive(path)


def test_metadata_text():
    assert parse_metadata("a=1\n\nb = x=y\n") == {"a": "1", "b": "x=y"}
    with pytest.raises(DataError):
        parse_metadata("no separator")
