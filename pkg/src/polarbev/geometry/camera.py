"""Pinhole cameras, rigs and projection of BEV cells into views."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError

EPS_DEPTH = 1e-6
RIG_SCHEMA = "polarbev.rig/1"


def yaw_rotation(angle: float) -> np.ndarray:
    """Rotation about the ego +z axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class CameraModel:
    """Pinhole camera; ``extrinsics`` maps homogeneous ego points into the camera frame.

    The camera looks along its +Z axis with u growing rightward and v
    downward; pixel centres sit at integer coordinates.
    """

    name: str
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64).reshape(3, 4)
        self.width, self.height = int(self.width), int(self.height)
        K = self.intrinsics
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ConfigurationError(f"camera {self.name}: focal lengths must be positive")
        if K[0, 1] != 0 or K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
            raise ConfigurationError(f"camera {self.name}: intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]")
        R = self.rotation
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ConfigurationError(f"camera {self.name}: extrinsic rotation is not a proper rotation")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"camera {self.name}: image size must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    @property
    def projection(self) -> np.ndarray:
        """``I @ E``, the 3x4 matrix taking homogeneous ego points to homogeneous pixels."""
        return self.intrinsics @ self.extrinsics

    @property
    def center(self) -> np.ndarray:
        """Camera position in the ego frame."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "intrinsics": self.intrinsics.tolist(),
            "extrinsics": self.extrinsics.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(d["name"], np.asarray(d["intrinsics"], dtype=np.float64),
                   np.asarray(d["extrinsics"], dtype=np.float64), d["width"], d["height"])


@dataclass
class CameraRig:
    cameras: list[CameraModel] = field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ConfigurationError("a camera rig needs at least one camera")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"camera names must be unique, got {names}")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self) -> Iterator[CameraModel]:
        return iter(self.cameras)

    def __getitem__(self, i: int) -> CameraModel:
        return self.cameras[i]

    def rotated(self, angle: float) -> "CameraRig":
        """The same rig turned about the ego vertical axis by ``angle`` radians."""
        Rz = yaw_rotation(angle)
        cams = []
        for c in self.cameras:
            E = np.concatenate([c.rotation @ Rz.T, c.translation[:, None]], axis=1)
            cams.append(CameraModel(c.name, c.intrinsics, E, c.width, c.height))
        return CameraRig(cams)

    def to_json(self) -> str:
        return json.dumps({"schema": RIG_SCHEMA, "cameras": [c.to_dict() for c in self.cameras]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CameraRig":
        d = json.loads(text)
        cams = d["cameras"] if isinstance(d, dict) else d
        return cls([CameraModel.from_dict(c) for c in cams])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CameraRig":
        return cls.from_json(Path(path).read_text())


def lift_homogeneous(x, y, z) -> np.ndarray:
    x, y, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(z, float))
    return np.stack([x, y, z, np.ones_like(x)], axis=-1)


def project_to_view(w, cam: CameraModel):
    """Project homogeneous ego points ``w[..., 4]`` into ``cam``.

    Returns ``(u, v, depth, valid)``. Where ``depth <= EPS_DEPTH`` the pixel
    coordinates are NaN; ``valid`` additionally requires the closed image
    rectangle ``[0, width-1] x [0, height-1]``.
    """
    w = np.asarray(w, dtype=np.float64)
    q = w @ cam.projection.T
    depth = q[..., 2]
    front = depth > EPS_DEPTH
    safe = np.where(front, depth, 1.0)
    u = np.where(front, q[..., 0] / safe, np.nan)
    v = np.where(front, q[..., 1] / safe, np.nan)
    with np.errstate(invalid="ignore"):
        valid = front & (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    return u, v, depth, valid


def backproject(u, v, depth, cam: CameraModel) -> np.ndarray:
    """Ego-frame point on the ray through pixel ``(u, v)`` at camera depth ``depth``."""
    K = cam.intrinsics
    u, v, depth = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(depth, float))
    pc = np.stack([(u - K[0, 2]) / K[0, 0] * depth, (v - K[1, 2]) / K[1, 1] * depth, depth], axis=-1)
    return (pc - cam.translation) @ cam.rotation


def pixel_rays(cam: CameraModel, u=None, v=None) -> tuple[np.ndarray, np.ndarray]:
    """Origin and ego-frame directions (camera depth 1) of rays through pixel centres.

    Defaults to the full ``height x width`` image.
    """
    if u is None or v is None:
        v, u = np.meshgrid(np.arange(cam.height, dtype=float), np.arange(cam.width, dtype=float), indexing="ij")
    K = cam.intrinsics
    dc = np.stack([(u - K[0, 2]) / K[0, 0], (v - K[1, 2]) / K[1, 1], np.ones_like(u)], axis=-1)
    return cam.center, dc @ cam.rotation


def project_grid(grid, heights, rig: CameraRig):
    """Project every grid cell centre at its height into every view.

    Returns pixel coordinates ``[K x R x A x 2]`` (NaN behind a camera) and
    validity masks ``[K x R x A]``.
    """
    heights = np.asarray(heights, dtype=np.float64)
    if heights.shape != tuple(grid.shape):
        raise DimensionError(f"project_grid: heights {heights.shape} do not match grid {grid.shape}")
    w = lift_homogeneous(grid.xy[..., 0], grid.xy[..., 1], heights)
    pix, masks = [], []
    for cam in rig:
        u, v, _, valid = project_to_view(w, cam)
        pix.append(np.stack([u, v], axis=-1))
        masks.append(valid)
    return np.stack(pix), np.stack(masks)


def rig_from_cameras(cams: Sequence[CameraModel]) -> CameraRig:
    return CameraRig(list(cams))


def look_camera(name: str, yaw: float, pitch: float, mount_height: float,
                width: int, height: int, fov: float, position_xy=(0.0, 0.0)) -> CameraModel:
    """Camera at ``(x, y, mount_height)`` looking along azimuth ``yaw``, tilted down by ``pitch``.

    ``fov`` is the horizontal field of view in radians; square pixels.
    """
    forward = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    r_c2e = np.stack([right, down, forward], axis=1)
    R = r_c2e.T
    C = np.array([position_xy[0], position_xy[1], mount_height], dtype=np.float64)
    E = np.concatenate([R, (-R @ C)[:, None]], axis=1)
    f = (width / 2) / math.tan(fov / 2)
    K = np.array([[f, 0.0, (width - 1) / 2], [0.0, f, (height - 1) / 2], [0.0, 0.0, 1.0]])
    return CameraModel(name, K, E, width, height)
