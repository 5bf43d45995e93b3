"""Dataset-level evaluation reports and raster file helpers."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DimensionError, ValidationError
from .core import decode_instances, iou, match_instances
from .setting import EvalSetting

REPORT_SCHEMA = "polarbev.metrics/1"


@dataclass
class RectPrediction:
    """Head outputs on an evaluation grid: binary seg, centerness and metric offsets."""

    seg: np.ndarray
    centerness: np.ndarray
    offset: np.ndarray

    @classmethod
    def from_logits(cls, seg_logits, centerness, offset) -> "RectPrediction":
        seg_logits = np.asarray(seg_logits)
        cen = np.asarray(centerness)
        return cls(seg_logits[1] > seg_logits[0], cen[0] if cen.ndim == 3 else cen, np.asarray(offset))


def evaluate(predictions: Sequence[RectPrediction], targets: Sequence, setting: EvalSetting,
             center_thresh: float = 0.3, nms_radius: float = 2.0, names: Sequence[str] | None = None) -> dict:
    """IoU and RQ/SQ/PQ per scene and over the whole set.

    ``targets`` items need ``seg`` and ``instances`` rasters on the setting's
    grid. Set-level IoU pools intersections and unions; set-level PQ pools
    matches, false positives and false negatives.
    """
    if len(predictions) != len(targets):
        raise DimensionError(f"evaluate: {len(predictions)} predictions for {len(targets)} targets")
    names = list(names) if names is not None else [f"scene_{i:04d}" for i in range(len(targets))]
    shape = setting.shape
    per_scene = []
    inter = union = tp = fp = fn = 0
    matched_ious: list[float] = []
    for name, pred, gt in zip(names, predictions, targets):
        if pred.seg.shape != shape or np.asarray(gt.seg).shape != shape:
            raise DimensionError(f"evaluate: {name} rasters are {pred.seg.shape}/{np.asarray(gt.seg).shape}, "
                                 f"setting expects {shape}")
        inst = decode_instances(pred.centerness, pred.offset, pred.seg, center_thresh, nms_radius,
                                setting.resolution)
        pan = match_instances(inst, gt.instances)
        p, g = pred.seg.astype(bool), np.asarray(gt.seg).astype(bool)
        inter += int(np.count_nonzero(p & g))
        union += int(np.count_nonzero(p | g))
        tp, fp, fn = tp + pan.tp, fp + pan.fp, fn + pan.fn
        matched_ious.extend(m[2] for m in pan.matches)
        per_scene.append({"name": name, "iou": iou(p, g), "rq": pan.rq, "sq": pan.sq, "pq": pan.pq,
                          "tp": pan.tp, "fp": pan.fp, "fn": pan.fn})
    if tp == 0:
        q = 1.0 if fp == 0 and fn == 0 else 0.0
        rq = sq = q
    else:
        sq = math.fsum(sorted(matched_ious)) / tp
        rq = tp / (tp + 0.5 * fp + 0.5 * fn)
    return {
        "schema": REPORT_SCHEMA,
        "setting": {"extent": [setting.extent_x, setting.extent_y], "resolution": setting.resolution,
                    "shape": list(shape)},
        "decode": {"center_thresh": center_thresh, "nms_radius": nms_radius},
        "aggregate": {"iou": inter / union if union else 1.0, "rq": rq, "sq": sq, "pq": rq * sq,
                      "tp": tp, "fp": fp, "fn": fn, "scenes": len(per_scene)},
        "per_scene": per_scene,
    }


def write_pgm(path: str | Path, raster) -> None:
    """Binary 8-bit PGM; values are clipped to 0..255."""
    a = np.clip(np.asarray(raster), 0, 255).astype(np.uint8)
    if a.ndim != 2:
        raise DimensionError(f"write_pgm: expected a 2-d raster, got {a.shape}")
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + a.tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) 8-bit PGM."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValidationError("truncated PGM header", str(path))
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValidationError(f"only 8-bit PGM is supported, maxval {maxval}", str(path))
    if magic == b"P5":
        data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    elif magic == b"P2":
        data = np.array(raw[pos:].split()[:w * h], dtype=np.uint8)
    else:
        raise ValidationError(f"not a PGM file (magic {magic!r})", str(path))
    if data.size != w * h:
        raise ValidationError(f"PGM payload holds {data.size} values, header says {w}x{h}", str(path))
    return data.reshape(h, w).copy()
