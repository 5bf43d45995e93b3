"""Grid construction, coordinate transforms and multi-camera projection."""

from .camera import (
    EPS_DEPTH,
    CameraModel,
    CameraRig,
    backproject,
    lift_homogeneous,
    look_camera,
    pixel_rays,
    project_grid,
    project_to_view,
    yaw_rotation,
)
from .grid import PolarGrid, RectGrid, build_polar_grid, cartesian_to_polar, polar_to_cartesian

__all__ = [
    "EPS_DEPTH", "CameraModel", "CameraRig", "PolarGrid", "RectGrid", "backproject",
    "build_polar_grid", "cartesian_to_polar", "lift_homogeneous", "look_camera", "pixel_rays",
    "polar_to_cartesian", "project_grid", "project_to_view", "yaw_rotation",
]
