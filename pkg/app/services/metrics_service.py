"""
Shape-faithfulness metrics: per-sample mIoU, PCK, KW-mIoU and PSNR
"""
import math
from typing import Dict, Optional, Sequence

import numpy as np

from app.core.errors import DimensionError, ParameterError, UndefinedMetricError
from app.models.attention import ObjectMask
from app.models.scene import Keypoint


def _bool(mask) -> np.ndarray:
    return mask.as_bool() if isinstance(mask, ObjectMask) else np.asarray(mask).astype(bool)


def miou(pred, gt, region) -> float:
    """
    IoU of a predicted mask against ground truth, with predictions outside the
    evaluation region set to the null class

    Args:
        pred: predicted object mask
        gt: ground-truth object mask
        region: the edit mask; predictions outside it are ignored

    Returns:
        float: |pred ∩ gt| / |pred ∪ gt| in [0, 1]
    """
    pred, gt, region = _bool(pred), _bool(gt), _bool(region)
    if not pred.shape == gt.shape == region.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape}, {gt.shape}, {region.shape}")
    if not gt.any():
        raise UndefinedMetricError("ground-truth mask is empty")
    pred = pred & region
    return float((pred & gt).sum() / (pred | gt).sum())


def bbox_diagonal(points: Sequence[Keypoint]) -> float:
    """Diagonal of the pixel bounding box spanned by the keypoints"""
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    return math.hypot(max(xs) - min(xs) + 1.0, max(ys) - min(ys) + 1.0)


def pck(pred_kps: Sequence[Keypoint], gt_kps: Sequence[Keypoint], threshold_frac: float = 0.1,
        diagonal: Optional[float] = None) -> float:
    """Fraction of ground-truth keypoints predicted within threshold_frac of the bbox diagonal"""
    if not gt_kps:
        raise UndefinedMetricError("no ground-truth keypoints")
    if threshold_frac <= 0:
        raise ParameterError(f"threshold fraction must be positive, got {threshold_frac}")
    threshold = threshold_frac * (diagonal if diagonal is not None else bbox_diagonal(gt_kps))
    predicted: Dict[str, Keypoint] = {p.name: p for p in pred_kps}
    correct = 0
    for ref in gt_kps:
        guess = predicted.get(ref.name)
        if guess is not None and math.hypot(guess.x - ref.x, guess.y - ref.y) <= threshold:
            correct += 1
    return correct / len(gt_kps)


def kw_miou(miou_value: float, pck_value: float) -> float:
    for name, value in (("miou", miou_value), ("pck", pck_value)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1], got {value}")
    return miou_value * pck_value


def psnr(a: np.ndarray, b: np.ndarray, region=None, data_range: float = 255.0) -> float:
    """Peak signal-to-noise ratio over the pixels of ``region`` (all pixels when omitted)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    diff = (a - b) ** 2
    if region is not None:
        sel = _bool(region)
        if a.ndim == 3 and a.shape[:2] == sel.shape:
            diff = diff[sel]
        elif a.ndim == 3 and a.shape[1:] == sel.shape:
            diff = diff[:, sel]
        else:
            diff = diff[sel]
        if diff.size == 0:
            raise UndefinedMetricError("psnr region is empty")
    mse = float(diff.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)
