"""BEV grids: the polar raster and its rectangular counterpart."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ConfigurationError


def polar_to_cartesian(r, theta):
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return r * np.cos(theta), r * np.sin(theta)


def cartesian_to_polar(x, y):
    """Inverse of :func:`polar_to_cartesian` with the angle wrapped into ``[-pi, pi)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = np.arctan2(y, x)
    theta = np.where(theta >= math.pi, theta - 2 * math.pi, theta)
    return np.hypot(x, y), theta


@dataclass(frozen=True)
class PolarGrid:
    """Polar BEV raster stored as a ``d_rad x d_ang`` array.

    Row ``j`` holds radius ``(j + 0.5) * r_max / d_rad``; column ``k`` holds
    angle ``-pi + (k + 0.5) * 2 pi / d_ang``. The angular axis wraps.
    """

    r_max: float
    d_rad: int
    d_ang: int

    kind = "polar"
    circular_cols = True

    @property
    def dr(self) -> float:
        return self.r_max / self.d_rad

    @property
    def dtheta(self) -> float:
        return 2 * math.pi / self.d_ang

    @property
    def shape(self) -> tuple[int, int]:
        return (self.d_rad, self.d_ang)

    @property
    def size(self) -> int:
        return self.d_rad * self.d_ang

    @cached_property
    def radii(self) -> np.ndarray:
        return (np.arange(self.d_rad) + 0.5) * self.dr

    @cached_property
    def thetas(self) -> np.ndarray:
        return -math.pi + (np.arange(self.d_ang) + 0.5) * self.dtheta

    @cached_property
    def centers(self) -> np.ndarray:
        """``[d_rad x d_ang x 2]`` array of ``(r, theta)``."""
        r, t = np.meshgrid(self.radii, self.thetas, indexing="ij")
        return np.stack([r, t], axis=-1)

    @cached_property
    def xy(self) -> np.ndarray:
        """Cartesian cell centres, ``[d_rad x d_ang x 2]``."""
        x, y = polar_to_cartesian(self.centers[..., 0], self.centers[..., 1])
        return np.stack([x, y], axis=-1)

    def cell_area(self, j: int) -> float:
        """Area of any cell in radial row ``j``; grows linearly with ``j``."""
        r0, r1 = j * self.dr, (j + 1) * self.dr
        return 0.5 * (r1 ** 2 - r0 ** 2) * self.dtheta

    def fractional_index(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous (row, col) coordinates of points plus their radius."""
        r, theta = cartesian_to_polar(x, y)
        return r / self.dr - 0.5, (theta + math.pi) / self.dtheta - 0.5, r


def build_polar_grid(r_max: float, d_rad: int, d_ang: int) -> PolarGrid:
    if not (r_max > 0):
        raise ConfigurationError(f"r_max must be positive, got {r_max}")
    if int(d_rad) != d_rad or int(d_ang) != d_ang or d_rad < 1 or d_ang < 1:
        raise ConfigurationError(f"d_rad and d_ang must be positive integers, got {d_rad}, {d_ang}")
    return PolarGrid(float(r_max), int(d_rad), int(d_ang))


@dataclass(frozen=True)
class RectGrid:
    """Axis-aligned raster centred on the ego vehicle.

    Row ``i`` runs along x (forward), column ``j`` along y (left); cell
    ``(i, j)`` is centred at ``(-extent_x/2 + (i+0.5) res, -extent_y/2 + (j+0.5) res)``.
    """

    extent_x: float
    extent_y: float
    resolution: float

    kind = "rect"
    circular_cols = False

    def __post_init__(self):
        if not (self.resolution > 0 and self.extent_x > 0 and self.extent_y > 0):
            raise ConfigurationError("rect grid extents and resolution must be positive")
        for ext in (self.extent_x, self.extent_y):
            n = ext / self.resolution
            if abs(n - round(n)) > 1e-9:
                raise ConfigurationError(f"extent {ext} is not divisible by resolution {self.resolution}")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(round(self.extent_x / self.resolution)), int(round(self.extent_y / self.resolution)))

    @property
    def size(self) -> int:
        n_x, n_y = self.shape
        return n_x * n_y

    @cached_property
    def xs(self) -> np.ndarray:
        return -self.extent_x / 2 + (np.arange(self.shape[0]) + 0.5) * self.resolution

    @cached_property
    def ys(self) -> np.ndarray:
        return -self.extent_y / 2 + (np.arange(self.shape[1]) + 0.5) * self.resolution

    @cached_property
    def xy(self) -> np.ndarray:
        x, y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([x, y], axis=-1)

    def fractional_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return ((x + self.extent_x / 2) / self.resolution - 0.5,
                (y + self.extent_y / 2) / self.resolution - 0.5)
