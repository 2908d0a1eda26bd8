"""The standalone writer must emit bytes the consumer package parses
bit-exactly; the consumer is used here only as the reference reader."""

import struct

import numpy as np
import pytest

from feature_exporter.sspt_writer import (
    binary_mask_bytes,
    feature_bytes,
    write_binary_mask,
    write_feature,
)
from ssmatch.sspt import read_tensor_bytes, read_tensor_file
from ssmatch.tensor_core import MASK_BINARY, FeatureMap, Mask


def test_feature_header_layout():
    data = np.zeros((2, 3, 4), dtype=np.float32)
    blob = feature_bytes(data)
    assert blob[:4] == b"SSPT"
    assert struct.unpack("<H", blob[4:6]) == (1,)
    assert blob[6] == 0
    assert struct.unpack("<3I", blob[7:19]) == (2, 3, 4)
    assert len(blob) == 19 + 2 * 3 * 4 * 4


def test_mask_header_layout():
    blob = binary_mask_bytes(np.eye(3, dtype=np.uint8))
    assert blob[6] == 1
    assert struct.unpack("<2I", blob[7:15]) == (3, 3)
    assert blob[15:] == bytes([1, 0, 0, 0, 1, 0, 0, 0, 1])


def test_feature_round_trip_through_reference_reader():
    rng = np.random.default_rng(5)
    data = (rng.normal(size=(7, 4, 6)) * 20).astype(np.float32)
    item = read_tensor_bytes(feature_bytes(data))
    assert isinstance(item, FeatureMap)
    assert item.data.tobytes() == data.tobytes()


def test_mask_round_trip_through_reference_reader():
    rng = np.random.default_rng(6)
    data = (rng.random(size=(9, 5)) < 0.4).astype(np.uint8)
    item = read_tensor_bytes(binary_mask_bytes(data))
    assert isinstance(item, Mask) and item.kind == MASK_BINARY
    assert np.array_equal(item.data, data)


def test_file_writers(tmp_path):
    fpath = tmp_path / "f.sspt"
    mpath = tmp_path / "m.sspt"
    write_feature(fpath, np.ones((1, 2, 2), dtype=np.float32))
    write_binary_mask(mpath, np.ones((2, 2), dtype=np.uint8))
    assert isinstance(read_tensor_file(fpath), FeatureMap)
    assert read_tensor_file(mpath).kind == MASK_BINARY


@pytest.mark.parametrize("bad", [
    np.zeros((2, 2), dtype=np.float32),          # wrong rank
    np.full((1, 2, 2), np.nan, dtype=np.float32),
])
def test_feature_writer_rejects(bad):
    with pytest.raises(ValueError):
        feature_bytes(bad)


@pytest.mark.parametrize("bad", [
    np.zeros((2, 2, 2), dtype=np.uint8),         # wrong rank
    np.full((2, 2), 2, dtype=np.uint8),          # not 0/1
    np.full((2, 2), 0.5),                        # fractional
])
def test_mask_writer_rejects(bad):
    with pytest.raises(ValueError):
        binary_mask_bytes(bad)
