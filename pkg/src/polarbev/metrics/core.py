"""Semantic IoU, instance decoding and panoptic quality on BEV rasters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..errors import DimensionError

MATCH_IOU = 0.5


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def iou(pred, gt) -> float:
    """Intersection over union of two binary rasters; 1.0 when both are empty."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    _same_shape(pred, gt, "iou")
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


def canonicalize(labels) -> np.ndarray:
    """Relabel positive ids to ``1..N`` in order of first appearance (row-major)."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=np.int32)
    flat = labels.reshape(-1)
    ids, first = np.unique(flat[flat > 0], return_index=True)
    order = ids[np.argsort(first)]
    lut = {int(v): k + 1 for k, v in enumerate(order)}
    nz = flat > 0
    out.reshape(-1)[nz] = [lut[int(v)] for v in flat[nz]] if nz.any() else []
    return out


@dataclass(frozen=True)
class PanopticResult:
    rq: float
    sq: float
    pq: float
    tp: int
    fp: int
    fn: int
    matches: tuple[tuple[int, int, float], ...] = ()

    def as_tuple(self) -> tuple[float, float, float]:
        return self.rq, self.sq, self.pq


def match_instances(pred, gt) -> PanopticResult:
    """Pair instances with IoU > 0.5 and compute recognition/segmentation quality.

    At that threshold each instance can overlap at most one partner by more
    than half of their union, so the matching is unique.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _same_shape(pred, gt, "panoptic_quality")
    pred_ids = np.unique(pred[pred > 0])
    gt_ids = np.unique(gt[gt > 0])
    p_area = {int(i): int(c) for i, c in zip(*np.unique(pred[pred > 0], return_counts=True))}
    g_area = {int(i): int(c) for i, c in zip(*np.unique(gt[gt > 0], return_counts=True))}
    both = (pred > 0) & (gt > 0)
    pairs, counts = np.unique(np.stack([pred[both], gt[both]]), axis=1, return_counts=True)
    matches = []
    for (p, g), inter in zip(pairs.T.tolist(), counts.tolist()):
        union = p_area[p] + g_area[g] - inter
        # inter / union > 1/2 without rounding
        if 2 * inter > union:
            matches.append((p, g, inter / union))
    tp = len(matches)
    fp = len(pred_ids) - tp
    fn = len(gt_ids) - tp
    if tp == 0:
        q = 1.0 if fp == 0 and fn == 0 else 0.0
        return PanopticResult(q, q, q * q, 0, fp, fn, ())
    sq = math.fsum(sorted(m[2] for m in matches)) / tp
    rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    return PanopticResult(rq, sq, sq * rq, tp, fp, fn, tuple(matches))


def panoptic_quality(pred, gt) -> tuple[float, float, float]:
    """``(RQ, SQ, PQ)``; two empty maps score ``(1, 1, 1)``."""
    return match_instances(pred, gt).as_tuple()


def decode_instances(centerness, offset, seg, center_thresh: float = 0.3, nms_radius: float = 2.0,
                     resolution: float = 1.0) -> np.ndarray:
    """Turn centerness peaks and offsets into an instance map.

    ``offset[0]`` and ``offset[1]`` are metric displacements along the row
    and column axes toward the instance centre. Candidate centres are local
    maxima above ``center_thresh``, kept greedily by descending centerness
    (row-major order breaks ties) unless within ``nms_radius`` of a kept one.
    Foreground cells join the centre nearest to ``cell + offset``, or stay
    background if that is farther than ``2 * nms_radius``.
    """
    cen = np.asarray(centerness, dtype=np.float64)
    if cen.ndim == 3:
        cen = cen[0]
    off = np.asarray(offset, dtype=np.float64)
    seg = np.asarray(seg).astype(bool)
    if off.shape != (2,) + cen.shape or seg.shape != cen.shape:
        raise DimensionError(f"decode_instances: centerness {cen.shape}, offset {off.shape}, seg {seg.shape}")
    out = np.zeros(cen.shape, dtype=np.int32)
    peaks = (cen == ndimage.maximum_filter(cen, size=3, mode="nearest")) & (cen > center_thresh)
    cand = np.flatnonzero(peaks)
    if cand.size == 0:
        return out
    order = np.lexsort((cand, -cen.reshape(-1)[cand]))
    cand_xy = np.stack(np.unravel_index(cand, cen.shape), axis=1) * resolution
    tree = cKDTree(cand_xy)
    suppressed = np.zeros(cand.size, dtype=bool)
    kept: list[int] = []
    for k in order:
        if suppressed[k]:
            continue
        kept.append(k)
        near = tree.query_ball_point(cand_xy[k], nms_radius)
        suppressed[near] = True
    centers = cand_xy[kept]
    fg = np.flatnonzero(seg)
    if fg.size == 0:
        return out
    cells = np.stack(np.unravel_index(fg, cen.shape), axis=1) * resolution
    votes = cells + off.reshape(2, -1)[:, fg].T
    k = min(2, len(kept))
    dist, idx = cKDTree(centers).query(votes, k=k)
    if k == 2:
        # equidistant centres go to the earlier-kept one
        tie = (dist[:, 1] == dist[:, 0]) & (idx[:, 1] < idx[:, 0])
        nearest = np.where(tie, idx[:, 1], idx[:, 0])
        dist = dist[:, 0]
    else:
        nearest = idx
    ok = dist <= 2 * nms_radius
    out.reshape(-1)[fg[ok]] = nearest[ok] + 1
    return canonicalize(out)
