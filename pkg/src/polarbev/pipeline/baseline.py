"""Depth-based lift-and-splat transform, kept as a frozen comparison baseline (no gradients)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..geometry import CameraRig, RectGrid, pixel_rays


def depth_transform(grid: RectGrid, rig: CameraRig, view_features: Sequence, feature_stride: int = 1,
                    depths: Sequence[np.ndarray] | None = None, depth_range: tuple[float, float] = (1.0, 60.0),
                    n_bins: int = 64) -> np.ndarray:
    """Lift every feature pixel along its ray and splat it onto ``grid``.

    Without ``depths`` each pixel spreads uniformly over ``n_bins`` depths in
    ``depth_range``. With ``depths`` (one ``[H_f x W_f]`` map per view, ``inf``
    or NaN for no surface) all mass sits at the given depth. Within a view,
    a cell averages the features that land in it; views are then summed, so
    cells reached by no view are zero. Returns ``[H x W x C]``.
    """
    if len(view_features) != len(rig):
        raise ConfigurationError(f"depth_transform: {len(view_features)} feature maps for {len(rig)} views")
    H, W = grid.shape
    out = None
    for k, (cam, feat) in enumerate(zip(rig, view_features)):
        feat = np.asarray(getattr(feat, "data", feat), dtype=np.float64)
        C, Hf, Wf = feat.shape
        s = float(feature_stride)
        v, u = np.meshgrid((np.arange(Hf) + 0.5) * s - 0.5, (np.arange(Wf) + 0.5) * s - 0.5, indexing="ij")
        origin, dirs = pixel_rays(cam, u, v)
        dirs = dirs.reshape(-1, 3)
        values = feat.reshape(C, -1).T
        if depths is not None:
            d = np.asarray(depths[k], dtype=np.float64).reshape(-1, 1)
            w = np.ones_like(d)
        else:
            d = np.broadcast_to(np.linspace(*depth_range, n_bins), (dirs.shape[0], n_bins))
            w = np.full(d.shape, 1.0 / n_bins)
        pts = origin[None, None, :2] + d[..., None] * dirs[:, None, :2]
        row, col = grid.fractional_index(pts[..., 0], pts[..., 1])
        finite = np.isfinite(row) & np.isfinite(col)
        i = np.floor(np.where(finite, row, -1.0) + 0.5).astype(np.int64)
        j = np.floor(np.where(finite, col, -1.0) + 0.5).astype(np.int64)
        ok = finite & (i >= 0) & (i < H) & (j >= 0) & (j < W)
        cell = (i * W + j)[ok]
        pix = np.broadcast_to(np.arange(dirs.shape[0])[:, None], d.shape)[ok]
        wt = w[ok]
        acc = np.zeros((H * W, C))
        np.add.at(acc, cell, wt[:, None] * values[pix])
        mass = np.bincount(cell, weights=wt, minlength=H * W)
        view = np.divide(acc, mass[:, None], out=np.zeros_like(acc), where=mass[:, None] > 0)
        out = view if out is None else out + view
    return out.reshape(H, W, -1)
