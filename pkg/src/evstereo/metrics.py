"""Disparity accuracy metrics and an image alignment score."""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .imageops import DisparityMap


class EvalResult(NamedTuple):
    epe: float
    bad1: float
    bad3: float
    bad5: float
    valid_count: int


def _error_pool(pred: DisparityMap, gt: DisparityMap,
                mask: Optional[np.ndarray]) -> np.ndarray:
    if pred.data.shape != gt.data.shape:
        raise ValueError("prediction and ground truth shapes must match")
    valid = gt.validity.copy()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gt.data.shape:
            raise ValueError("mask shape must match the disparity maps")
        valid &= ~mask
    if not np.any(valid):
        raise ValueError("no valid pixels to evaluate")
    return np.abs(pred.data - gt.data)[valid]


def end_point_error(pred: DisparityMap, gt: DisparityMap,
                    mask: Optional[np.ndarray] = None) -> float:
    """Mean absolute disparity error over valid, unmasked pixels."""
    return float(_error_pool(pred, gt, mask).mean())


def bad_pixel_ratio(pred: DisparityMap, gt: DisparityMap, threshold: float,
                    mask: Optional[np.ndarray] = None) -> float:
    """Fraction of valid pixels whose error strictly exceeds threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    err = _error_pool(pred, gt, mask)
    return float(np.count_nonzero(err > threshold) / err.size)


def evaluate(pred: DisparityMap, gt: DisparityMap,
             mask: Optional[np.ndarray] = None) -> EvalResult:
    """EPE plus bad-pixel ratios at 1, 3, and 5 px on one pool of pixels."""
    err = _error_pool(pred, gt, mask)
    return EvalResult(
        epe=float(err.mean()),
        bad1=float(np.count_nonzero(err > 1.0) / err.size),
        bad3=float(np.count_nonzero(err > 3.0) / err.size),
        bad5=float(np.count_nonzero(err > 5.0) / err.size),
        valid_count=int(err.size),
    )


def alignment_score(a: np.ndarray, b: np.ndarray,
                    mask: Optional[np.ndarray] = None) -> float:
    """Zero-mean normalized cross-correlation between two rasters, in
    [-1, 1]. Pixels where mask is True are excluded; if either input is
    constant over the pool the score is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("inputs must share a shape")
    if mask is not None:
        keep = ~np.asarray(mask, dtype=bool)
        if keep.shape != a.shape:
            raise ValueError("mask shape must match the inputs")
        a, b = a[keep], b[keep]
    if a.size == 0:
        raise ValueError("no pixels to correlate")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom <= 0:
        return 0.0
    return float((da * db).sum() / denom)
