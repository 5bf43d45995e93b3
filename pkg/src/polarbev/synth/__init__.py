"""Deterministic synthetic scenes, renders and ground truth."""

from .gt import CENTER_SIGMA_CELLS, GTRasters, rasterize_gt
from .render import (
    BOX_SIDE,
    BOX_TOP,
    CHANNEL_ROLES,
    GROUND,
    NO_HIT,
    SENTINEL,
    HitInfo,
    RenderChannelPlan,
    cast_rays,
    make_ring_rig,
    render_views,
)
from .scene import DIFFICULTY, EGO_RADIUS, Box, SceneSpec, boxes_overlap, gen_scene_set

__all__ = [
    "BOX_SIDE", "BOX_TOP", "CENTER_SIGMA_CELLS", "CHANNEL_ROLES", "DIFFICULTY", "EGO_RADIUS", "GROUND",
    "NO_HIT", "SENTINEL", "Box", "GTRasters", "HitInfo", "RenderChannelPlan", "SceneSpec", "boxes_overlap",
    "cast_rays", "gen_scene_set", "make_ring_rig", "rasterize_gt", "render_views",
]
