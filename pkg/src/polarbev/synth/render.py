"""Camera rigs and analytic ray casting of box-world scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..geometry import CameraModel, CameraRig, look_camera, pixel_rays
from .scene import SceneSpec

SENTINEL = -1e6
CHANNEL_ROLES = ("world_x", "world_y", "surface_height", "box_id", "constant")

# hit kinds
NO_HIT, GROUND, BOX_TOP, BOX_SIDE = 0, 1, 2, 3


def make_ring_rig(k: int = 6, fov_deg: float = 70.0, width: int = 256, height: int = 160,
                  mount_height: float = 3.0, pitch_deg: float = 5.0) -> CameraRig:
    """``k`` cameras at the ego origin, evenly spaced in yaw starting straight ahead."""
    if k < 1:
        raise ConfigurationError(f"need at least one camera, got {k}")
    if not 0 < fov_deg < 180:
        raise ConfigurationError(f"horizontal field of view must be in (0, 180) degrees, got {fov_deg}")
    fov, pitch = math.radians(fov_deg), math.radians(pitch_deg)
    return CameraRig([look_camera(f"cam{i}", 2 * math.pi * i / k, pitch, mount_height, width, height, fov)
                      for i in range(k)])


@dataclass(frozen=True)
class RenderChannelPlan:
    roles: tuple[str, ...] = ("surface_height", "constant")

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        if not self.roles:
            raise ConfigurationError("a render plan needs at least one channel")
        unknown = [r for r in self.roles if r not in CHANNEL_ROLES]
        if unknown:
            raise ConfigurationError(f"unknown channel roles {unknown}; choose from {CHANNEL_ROLES}")


@dataclass
class HitInfo:
    """Per-pixel ray-cast record for one view."""

    kind: np.ndarray        # NO_HIT / GROUND / BOX_TOP / BOX_SIDE
    box: np.ndarray         # box index, -1 for ground or no hit
    point: np.ndarray       # [H x W x 3] hit point, NaN where nothing was hit
    depth: np.ndarray       # camera-frame depth of the hit, inf where nothing was hit


def cast_rays(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray) -> HitInfo:
    """Nearest intersection of rays ``origin + t * dirs`` (t > 0) with boxes and the ground.

    ``dirs`` are scaled to unit camera depth, so ``t`` is the depth.
    Ground hits outside the square ``|x|, |y| <= extent`` do not count.
    """
    shape = dirs.shape[:-1]
    d = dirs.reshape(-1, 3)
    n = d.shape[0]
    best_t = np.full(n, np.inf)
    kind = np.zeros(n, dtype=np.int8)
    box_idx = np.full(n, -1, dtype=np.int32)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(d[:, 2] < 0, -origin[2] / d[:, 2], np.inf)
    gp = origin[:2] + t_ground[:, None] * d[:, :2]
    inside = np.all(np.abs(gp) <= scene.extent, axis=1) & np.isfinite(t_ground)
    hit = inside & (t_ground > 0)
    best_t[hit] = t_ground[hit]
    kind[hit] = GROUND

    for bi, box in enumerate(scene.boxes):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        ox, oy = box.to_local(origin[0], origin[1])
        o = np.array([float(ox), float(oy), origin[2]])
        dl = np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)
        lo = np.array([-box.length / 2, -box.width / 2, 0.0])
        hi = np.array([box.length / 2, box.width / 2, box.top])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dl
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        # rays parallel to a slab: inside means (-inf, inf), outside means empty
        par = dl == 0
        inside_slab = (o >= lo) & (o <= hi)
        tmin = np.where(par, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(par, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        face = tmin.argmax(axis=1)
        hit = (t_near <= t_far) & (t_near > 0) & (t_near < best_t)
        best_t[hit] = t_near[hit]
        kind[hit] = np.where(face[hit] == 2, BOX_TOP, BOX_SIDE)
        box_idx[hit] = bi

    found = kind != NO_HIT
    point = np.full((n, 3), np.nan)
    point[found] = origin + best_t[found, None] * d[found]
    return HitInfo(kind.reshape(shape), box_idx.reshape(shape), point.reshape(shape + (3,)),
                   best_t.reshape(shape))


def render_view(scene: SceneSpec, cam: CameraModel, plan: RenderChannelPlan) -> tuple[np.ndarray, HitInfo]:
    origin, dirs = pixel_rays(cam)
    info = cast_rays(scene, origin, dirs)
    found = info.kind != NO_HIT
    tops = np.array([b.top for b in scene.boxes] + [0.0])
    channels = []
    for role in plan.roles:
        if role == "world_x":
            ch = info.point[..., 0]
        elif role == "world_y":
            ch = info.point[..., 1]
        elif role == "surface_height":
            ch = tops[info.box]  # index -1 picks the ground's 0
        elif role == "box_id":
            ch = (info.box + 1).astype(np.float64)
        else:
            ch = np.ones(info.kind.shape)
        channels.append(np.where(found, ch, SENTINEL))
    return np.stack(channels), info


def render_views(scene: SceneSpec, rig: CameraRig,
                 plan: RenderChannelPlan | Sequence[str] = RenderChannelPlan()) -> tuple[list[np.ndarray], list[HitInfo]]:
    """One ``[C x H x W]`` image per camera plus per-pixel hit records.

    Pixels whose ray meets nothing inside the scene hold ``SENTINEL`` in every channel.
    """
    if not isinstance(plan, RenderChannelPlan):
        plan = RenderChannelPlan(tuple(plan))
    images, infos = [], []
    for cam in rig:
        img, info = render_view(scene, cam, plan)
        images.append(img)
        infos.append(info)
    return images, infos
