"""Resampling BEV predictions from the model grid onto an evaluation raster."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .. import tensorcore as tc
from ..errors import ConfigurationError, DimensionError
from ..geometry import PolarGrid, RectGrid
from ..tensorcore import Tensor


def _as_rect(rect_spec) -> RectGrid:
    if isinstance(rect_spec, RectGrid):
        return rect_spec
    if hasattr(rect_spec, "grid"):
        return rect_spec.grid()
    extent_x, extent_y, resolution = rect_spec
    if not resolution > 0:
        raise ConfigurationError(f"rect resolution must be positive, got {resolution}")
    return RectGrid(float(extent_x), float(extent_y), float(resolution))


def _axis_taps(coord: np.ndarray, n: int, wrap: bool, mode: str):
    """Two neighbouring indices and weights along one axis (nearest uses one tap with weight 1)."""
    if mode == "nearest":
        i = np.floor(coord + 0.5).astype(np.int64)
        i = i % n if wrap else np.clip(i, 0, n - 1)
        return [(i, np.ones_like(coord))]
    if wrap:
        f = np.floor(coord)
        w = coord - f
        i0 = f.astype(np.int64) % n
        return [(i0, 1 - w), ((i0 + 1) % n, w)]
    c = np.clip(coord, 0, n - 1)
    i0 = np.minimum(np.floor(c), max(n - 2, 0)).astype(np.int64)
    w = c - i0
    return [(i0, 1 - w), (np.minimum(i0 + 1, n - 1), w)]


@lru_cache(maxsize=16)
def remap_matrix(src, dst: RectGrid, mode: str = "bilinear",
                 dtype: str = "float64") -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse ``[N_dst x N_src]`` resampling matrix and the mask of destination cells outside ``src``.

    For a polar source, angles wrap and radii clamp; cells at ``r >= r_max``
    get no weights. A rectangular source clamps both axes and leaves cells
    outside its extent empty.
    """
    if mode not in ("nearest", "bilinear"):
        raise ConfigurationError(f"remap mode must be 'nearest' or 'bilinear', got {mode!r}")
    x = dst.xy[..., 0].reshape(-1)
    y = dst.xy[..., 1].reshape(-1)
    R, A = src.shape
    if isinstance(src, PolarGrid):
        row, col, r = src.fractional_index(x, y)
        outside = r >= src.r_max
        rows = _axis_taps(row, R, False, mode)
        cols = _axis_taps(col, A, True, mode)
    else:
        row, col = src.fractional_index(x, y)
        outside = (np.abs(x) >= src.extent_x / 2) | (np.abs(y) >= src.extent_y / 2)
        rows = _axis_taps(row, R, False, mode)
        cols = _axis_taps(col, A, False, mode)
    n = x.size
    inside = ~outside
    ii, jj, ww = [], [], []
    for ri, rw in rows:
        for ci, cw in cols:
            ii.append(np.flatnonzero(inside))
            jj.append((ri * A + ci)[inside])
            ww.append((rw * cw)[inside])
    M = sp.csr_matrix((np.concatenate(ww), (np.concatenate(ii), np.concatenate(jj))), shape=(n, R * A))
    M = M.astype(dtype)
    return M, outside.reshape(dst.shape)


def remap_polar_to_rect(polar: Tensor, grid: PolarGrid | RectGrid, rect_spec, mode: str = "bilinear",
                        fill: float = 0.0) -> Tensor:
    """Resample ``[C x R x A]`` on ``grid`` to ``[C x H_r x W_r]`` on the rectangular raster."""
    polar = tc.as_tensor(polar)
    if polar.ndim != 3 or polar.shape[1:] != tuple(grid.shape):
        raise DimensionError(f"remap: input {polar.shape} does not match grid {grid.shape}")
    dst = _as_rect(rect_spec)
    M, outside = remap_matrix(grid, dst, mode, polar.dtype.name)
    C = polar.shape[0]
    flat = tc.transpose(tc.reshape(polar, (C, -1)), (1, 0))
    out = tc.transpose(tc.sparse_matmul(M, flat), (1, 0))
    out = tc.reshape(out, (C,) + dst.shape)
    if fill != 0.0 and outside.any():
        out = tc.add(out, np.where(outside, fill, 0.0).astype(polar.dtype)[None])
    return out


def field_on_grid(fn, grid) -> np.ndarray:
    """Evaluate ``fn(x, y)`` at every cell centre of ``grid``."""
    return fn(grid.xy[..., 0], grid.xy[..., 1])


def remap_error_bound(grid: PolarGrid) -> float:
    """Cell-diagonal scale ``dr + r_max * dtheta`` used when checking smooth-field remaps."""
    return grid.dr + grid.r_max * 2 * math.pi / grid.d_ang
