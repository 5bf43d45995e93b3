"""Segmentation, centerness and offset loss on the rectangular raster."""

from __future__ import annotations

import numpy as np

from .. import tensorcore as tc
from ..errors import DimensionError
from ..tensorcore import Tensor


def compute_loss(seg_logits: Tensor, centerness: Tensor, offset: Tensor, gt_seg, gt_center, gt_offset,
                 lambda_center: float = 0.1, lambda_offset: float = 0.1,
                 class_weight=None) -> tuple[Tensor, dict[str, float]]:
    """``CE(seg) + lambda_c * MSE(centerness) + lambda_o * L1(offset on foreground)``.

    Predictions are ``[2|1|2 x H x W]`` tensors already on the rectangular
    raster. ``class_weight`` turns the CE into a class-weighted mean over
    logits shifted by ``log(class_weight)``. The weighted optimum of the
    shifted logits is ``w_c * p_c``, so the raw logits still estimate the
    unweighted posterior and a plain argmax stays unbiased at inference.
    The offset term averages over foreground cells and both components;
    with no foreground it is exactly zero.
    """
    gt_seg = np.asarray(gt_seg).astype(np.int64)
    gt_center = np.asarray(gt_center)
    gt_offset = np.asarray(gt_offset)
    shape = gt_seg.shape
    if (seg_logits.shape != (2,) + shape or centerness.shape != (1,) + shape
            or offset.shape != (2,) + shape or gt_center.shape[-2:] != shape or gt_offset.shape != (2,) + shape):
        raise DimensionError(f"compute_loss: prediction shapes {seg_logits.shape}, {centerness.shape}, "
                             f"{offset.shape} vs targets {shape}, {gt_center.shape}, {gt_offset.shape}")
    dtype = seg_logits.dtype
    logits = seg_logits
    if class_weight is not None:
        class_weight = np.asarray(class_weight, dtype=np.float64)
        if class_weight.shape != (2,) or not np.all(class_weight > 0):
            raise DimensionError(f"compute_loss: class_weight must hold two positive values, got {class_weight}")
        logits = tc.add(seg_logits, np.log(class_weight).astype(dtype).reshape(2, 1, 1))
    ce = tc.cross_entropy(logits, gt_seg, class_weight)
    diff = tc.sub(centerness, gt_center.reshape((1,) + shape).astype(dtype))
    mse = tc.mean(tc.mul(diff, diff))
    total = tc.add(ce, tc.mul(mse, lambda_center))
    parts = {"ce": float(ce.data), "center": float(mse.data), "offset": 0.0}
    n_fg = int(gt_seg.sum())
    if n_fg > 0:
        mask = np.broadcast_to(gt_seg.astype(dtype), (2,) + shape)
        l1 = tc.sum_reduce(tc.mul(tc.abs_(tc.sub(offset, gt_offset.astype(dtype))), mask))
        l1 = tc.mul(l1, 1.0 / (2 * n_fg))
        total = tc.add(total, tc.mul(l1, lambda_offset))
        parts["offset"] = float(l1.data)
    parts["total"] = float(total.data)
    return total, parts
