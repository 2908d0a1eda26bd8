"""Segmentation metrics: IoU on binarized predictions, mean absolute
error over all pixels and over the true-positive region."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DimMismatchError
from .tensor_core import MASK_BINARY, Mask

IOU_THRESHOLD = 0.5


def _check(pred: Mask, gt: Mask):
    if gt.kind != MASK_BINARY:
        raise ValueError("ground truth must be a binary mask")
    if pred.spatial != gt.spatial:
        raise DimMismatchError(f"prediction {pred.spatial} vs gt {gt.spatial}")


def binarize(pred: Mask, threshold: float = IOU_THRESHOLD) -> Mask:
    return Mask((pred.data > threshold).astype(np.float32), MASK_BINARY)


def iou(pred: Mask, gt: Mask, threshold: float = IOU_THRESHOLD) -> float:
    """Intersection over union of the thresholded fg prediction.

    Both-empty counts as a perfect match (1.0): the query simply has no
    object and the prediction agrees.
    """
    _check(pred, gt)
    p = pred.data > threshold
    g = gt.data == 1.0
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(p, g).sum()
    return float(inter) / float(union)


def mae_all(pred: Mask, gt: Mask) -> float:
    """Mean |prediction - truth| over every pixel, in [0, 1]."""
    _check(pred, gt)
    diff = np.abs(pred.data.astype(np.float64) - gt.data.astype(np.float64))
    return float(diff.mean())


def mae_tp(pred: Mask, gt: Mask, threshold: float = IOU_THRESHOLD) -> Optional[float]:
    """Mean |prediction - truth| restricted to pixels that are fg in both
    the truth and the thresholded prediction; None when that set is empty."""
    _check(pred, gt)
    sel = np.logical_and(pred.data > threshold, gt.data == 1.0)
    if not np.any(sel):
        return None
    diff = np.abs(pred.data.astype(np.float64) - gt.data.astype(np.float64))
    return float(diff[sel].mean())
