import numpy as np
import pytest
from PIL import Image

from feature_exporter.errors import DecodeError, ShapeError
from feature_exporter.imaging import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    check_pair,
    downsample_mask,
    load_image,
    load_mask,
)
from pairgen import write_pair


def test_load_image_normalized(tmp_path):
    img_path, _ = write_pair(tmp_path, "a", width=32, height=20)
    arr = load_image(img_path)
    assert arr.shape == (3, 20, 32) and arr.dtype == np.float32
    # white pixel maps to (1 - mean) / std per channel
    Image.fromarray(np.full((4, 4, 3), 255, dtype=np.uint8), "RGB").save(
        tmp_path / "w.png")
    white = load_image(tmp_path / "w.png")
    want = (1.0 - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
    assert np.allclose(white[:, 0, 0], want, atol=1e-6)


def test_load_image_resize(tmp_path):
    img_path, _ = write_pair(tmp_path, "b", width=48, height=20)
    assert load_image(img_path, image_size=64).shape == (3, 64, 64)


def test_load_mask_binarizes_any_nonzero(tmp_path):
    m = np.array([[0, 1], [128, 255]], dtype=np.uint8)
    Image.fromarray(m, "L").save(tmp_path / "m.png")
    got = load_mask(tmp_path / "m.png")
    assert np.array_equal(got, [[0, 1], [1, 1]])


def test_decode_failure_names_file(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(DecodeError, match="broken.png"):
        load_image(bad)
    with pytest.raises(DecodeError, match="broken.png"):
        load_mask(bad)


def test_check_pair_names_both_files():
    with pytest.raises(ShapeError) as exc:
        check_pair("img.png", (48, 48), "mask.png", (32, 32))
    assert "img.png" in str(exc.value) and "mask.png" in str(exc.value)


def test_downsample_all_ones_stays_all_ones():
    mask = np.ones((48, 48), dtype=np.uint8)
    assert downsample_mask(mask, (3, 3)).all()


def test_downsample_identity_at_same_size():
    rng = np.random.default_rng(4)
    mask = (rng.random((7, 9)) < 0.5).astype(np.uint8)
    assert np.array_equal(downsample_mask(mask, (7, 9)), mask)


def test_downsample_matches_center_sampling_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        h, w = int(rng.integers(4, 40)), int(rng.integers(4, 40))
        oh, ow = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        mask = (rng.random((h, w)) < 0.5).astype(np.uint8)
        got = downsample_mask(mask, (oh, ow))
        want = np.empty((oh, ow), dtype=np.uint8)
        for i in range(oh):
            for j in range(ow):
                want[i, j] = mask[min(int((i + 0.5) * h / oh), h - 1),
                                  min(int((j + 0.5) * w / ow), w - 1)]
        assert np.array_equal(got, want)
        assert set(np.unique(got)) <= {0, 1}
