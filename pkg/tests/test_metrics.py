import numpy as np
import pytest

import oracles
from randgen import random_binary_mask, rng_for
from ssmatch.errors import DimMismatchError
from ssmatch.metrics import binarize, iou, mae_all, mae_tp
from ssmatch.tensor_core import MASK_BINARY, MASK_PROBABILITY, Mask


def random_pred(rng, h, w):
    return Mask(rng.random((h, w)).astype(np.float32), MASK_PROBABILITY)


def test_iou_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=80)
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        pred = random_pred(rng, h, w)
        gt = random_binary_mask(rng, h, w)
        assert iou(pred, gt) == oracles.naive_iou(pred.data, gt.data)


def test_iou_both_empty_is_one():
    pred = Mask(np.zeros((3, 3), dtype=np.float32), MASK_PROBABILITY)
    gt = Mask(np.zeros((3, 3), dtype=np.float32), MASK_BINARY)
    assert iou(pred, gt) == 1.0


def test_iou_disjoint_is_zero():
    pred = Mask(np.array([[1.0, 0.0]], dtype=np.float32), MASK_PROBABILITY)
    gt = Mask(np.array([[0.0, 1.0]], dtype=np.float32), MASK_BINARY)
    assert iou(pred, gt) == 0.0


def test_iou_threshold_is_strict():
    pred = Mask(np.array([[0.5]], dtype=np.float32), MASK_PROBABILITY)
    gt = Mask(np.array([[1.0]], dtype=np.float32), MASK_BINARY)
    assert iou(pred, gt) == 0.0          # 0.5 is not > 0.5


def test_mae_all_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=81)
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        pred = random_pred(rng, h, w)
        gt = random_binary_mask(rng, h, w)
        got = mae_all(pred, gt)
        want = oracles.naive_mae_all(pred.data, gt.data)
        assert abs(got - want) < 1e-12
        assert 0.0 <= got <= 1.0


def test_mae_tp_matches_oracle_many_cases():
    for case in range(120):
        rng = rng_for(case, tag=82)
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        pred = random_pred(rng, h, w)
        gt = random_binary_mask(rng, h, w)
        got = mae_tp(pred, gt)
        want = oracles.naive_mae_tp(pred.data, gt.data)
        if want is None:
            assert got is None
        else:
            assert abs(got - want) < 1e-12


def test_mae_tp_none_when_no_true_positives():
    pred = Mask(np.array([[0.9, 0.1]], dtype=np.float32), MASK_PROBABILITY)
    gt = Mask(np.array([[0.0, 1.0]], dtype=np.float32), MASK_BINARY)
    assert mae_tp(pred, gt) is None


def test_binarize():
    pred = Mask(np.array([[0.2, 0.8]], dtype=np.float32), MASK_PROBABILITY)
    out = binarize(pred)
    assert out.kind == MASK_BINARY
    assert out.data.tolist() == [[0.0, 1.0]]


def test_metrics_dim_mismatch():
    pred = Mask(np.zeros((2, 2), dtype=np.float32), MASK_PROBABILITY)
    gt = Mask(np.zeros((2, 3), dtype=np.float32), MASK_BINARY)
    with pytest.raises(DimMismatchError):
        iou(pred, gt)
