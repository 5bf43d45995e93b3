"""Ground-truth BEV rasters from box footprints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics.setting import EvalSetting
from .scene import SceneSpec

CENTER_SIGMA_CELLS = 3.0


@dataclass
class GTRasters:
    seg: np.ndarray          # bool [H x W]
    instances: np.ndarray    # int32 [H x W], 0 = background, box i -> i + 1
    centerness: np.ndarray   # [H x W] in [0, 1]
    offset: np.ndarray       # [2 x H x W] metres toward the owning box centre
    height: np.ndarray       # [H x W] box top on foreground, 0 elsewhere


def rasterize_gt(scene: SceneSpec, setting: EvalSetting, sigma_cells: float = CENTER_SIGMA_CELLS) -> GTRasters:
    """Rasterize footprints by testing cell centres; later boxes win where footprints overlap."""
    grid = setting.grid()
    x = grid.xy[..., 0]
    y = grid.xy[..., 1]
    shape = grid.shape
    instances = np.zeros(shape, dtype=np.int32)
    centerness = np.zeros(shape)
    height = np.zeros(shape)
    sigma = sigma_cells * setting.resolution
    for i, box in enumerate(scene.boxes):
        inside = box.contains(x, y)
        instances[inside] = i + 1
        height[inside] = box.top
        g = np.exp(-((x - box.x) ** 2 + (y - box.y) ** 2) / (2 * sigma * sigma))
        np.maximum(centerness, g, out=centerness)
    offset = np.zeros((2,) + shape)
    cx = np.array([0.0] + [b.x for b in scene.boxes])
    cy = np.array([0.0] + [b.y for b in scene.boxes])
    fg = instances > 0
    offset[0][fg] = cx[instances[fg]] - x[fg]
    offset[1][fg] = cy[instances[fg]] - y[fg]
    return GTRasters(fg, instances, centerness, offset, height)
