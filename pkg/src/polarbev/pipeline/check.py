"""End-to-end finite-difference check of the whole pipeline on a miniature configuration."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import CameraRig, look_camera
from ..metrics import EvalSetting
from ..synth import Box, SceneSpec, rasterize_gt, render_views
from ..tensorcore import GradCheckReport, grad_check
from .config import PipelineConfig
from .loss import compute_loss
from .model import init_params
from .train import forward_rect


def mini_config() -> PipelineConfig:
    """6 x 8 polar grid, 4 channels, two iterations, 16 x 16 feature maps from 128 x 128 views."""
    return PipelineConfig(d_rad=6, d_ang=8, r_max=16.0, C=4, n_iters=2, theta_spec=(4, 4, 1),
                          head_spec=(4, 4, 4), encoder_channels=(3, 3, 3, 4), dtype="float64")


def mini_problem(seed: int = 0):
    cfg = mini_config()
    rig = CameraRig([look_camera("front", 0.0, math.radians(25), 3.0, 128, 128, math.radians(100))])
    scene = SceneSpec((Box(7.0, 0.5, 0.4, 4.0, 2.0, 1.5),), name="mini")
    images, _ = render_views(scene, rig)
    setting = EvalSetting(16.0, 16.0, 2.0)
    gt = rasterize_gt(scene, setting, sigma_cells=1.0)
    params = init_params(cfg, seed)
    # wake the zero-initialised height heads so every path carries gradient
    rng = np.random.default_rng(seed + 1)
    for k, p in params.items():
        if k.startswith("theta.") and k.endswith(".w1"):
            p.data[...] = rng.standard_normal(p.shape) * 0.3
    return cfg, rig, images, setting, gt, params


def mini_gradcheck(seed: int = 0, step: float = 1e-4, tol: float = 1e-3) -> GradCheckReport:
    """Every parameter gradient of the segmentation/centerness/offset loss against central differences."""
    cfg, rig, images, setting, gt, params = mini_problem(seed)
    names = sorted(params)

    def objective():
        (seg, cen, off), _ = forward_rect(params, cfg, rig, images, setting)
        loss, _ = compute_loss(seg, cen, off, gt.seg, gt.centerness, gt.offset)
        return loss

    return grad_check(objective, [params[k] for k in names], step=step, tol=tol, names=names)
