"""Box-world scenes and their reproducible generation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ValidationError

SCENE_SCHEMA = "polarbev.scene/1"
EGO_RADIUS = 2.0
# box tops must stay inside the model's height bounds
TOP_BOUNDS = (-2.0, 2.0)


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    yaw: float
    length: float
    width: float
    top: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ConfigurationError(f"box extents must be positive, got {self.length} x {self.width}")
        if not self.top > 0:
            raise ConfigurationError(f"box top height must be positive, got {self.top}")

    def to_local(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates in the box frame (x along the length)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = np.asarray(x, dtype=np.float64) - self.x
        dy = np.asarray(y, dtype=np.float64) - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def contains(self, x, y) -> np.ndarray:
        lx, ly = self.to_local(x, y)
        return (np.abs(lx) <= self.length / 2) & (np.abs(ly) <= self.width / 2)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ np.array([[c, s], [-s, c]]) + [self.x, self.y]

    def distance_to_point(self, px: float, py: float) -> float:
        lx, ly = self.to_local(px, py)
        return float(math.hypot(max(abs(float(lx)) - self.length / 2, 0.0),
                                max(abs(float(ly)) - self.width / 2, 0.0)))


def boxes_overlap(a: Box, b: Box, gap: float = 0.0) -> bool:
    """Separating-axis test on footprints grown by ``gap / 2`` on every side."""
    ga = Box(a.x, a.y, a.yaw, a.length + gap, a.width + gap, a.top)
    gb = Box(b.x, b.y, b.yaw, b.length + gap, b.width + gap, b.top)
    ca, cb = ga.corners(), gb.corners()
    for box in (ga, gb):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        for axis in (np.array([c, s]), np.array([-s, c])):
            pa, pb = ca @ axis, cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


@dataclass(frozen=True)
class SceneSpec:
    boxes: tuple[Box, ...] = ()
    seed: int = 0
    # half-width of the square world; ground beyond it is not rendered
    extent: float = 50.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for b in self.boxes:
            if not TOP_BOUNDS[0] < b.top < TOP_BOUNDS[1]:
                raise ConfigurationError(f"box top {b.top} outside the open interval {TOP_BOUNDS}")
            if np.any(np.abs(b.corners()) > self.extent):
                raise ConfigurationError(f"box at ({b.x}, {b.y}) leaves the scene extent {self.extent}")

    def to_dict(self) -> dict:
        return {"schema": SCENE_SCHEMA, "name": self.name, "seed": self.seed, "extent": self.extent,
                "boxes": [asdict(b) for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            boxes = tuple(Box(**b) for b in d["boxes"])
            return cls(boxes, int(d.get("seed", 0)), float(d.get("extent", 50.0)), str(d.get("name", "")))
        except (KeyError, TypeError, ConfigurationError) as exc:
            raise ValidationError(str(exc), "scene") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Difficulty:
    min_boxes: int
    max_boxes: int
    min_range: float
    max_range: float
    gap: float = 1.0
    length: tuple[float, float] = (3.0, 6.0)
    width: tuple[float, float] = (1.5, 2.5)
    top: tuple[float, float] = (1.0, 2.0)


DIFFICULTY = {
    1: Difficulty(1, 4, 6.0, 25.0),
    2: Difficulty(1, 8, 6.0, 35.0),
}

SINGLE_BOX = Box(10.0, 0.0, 0.0, 4.0, 2.0, 1.5)


def sample_scene(rng: np.random.Generator, level: Difficulty, extent: float = 50.0, seed: int = 0,
                 name: str = "", max_tries: int = 1000) -> SceneSpec:
    n = int(rng.integers(level.min_boxes, level.max_boxes + 1))
    boxes: list[Box] = []
    for _ in range(max_tries):
        if len(boxes) == n:
            break
        r = math.sqrt(rng.uniform(level.min_range ** 2, level.max_range ** 2))
        phi = rng.uniform(-math.pi, math.pi)
        box = Box(r * math.cos(phi), r * math.sin(phi), rng.uniform(-math.pi, math.pi),
                  rng.uniform(*level.length), rng.uniform(*level.width), rng.uniform(*level.top))
        if box.distance_to_point(0.0, 0.0) <= EGO_RADIUS:
            continue
        if np.any(np.abs(box.corners()) > extent):
            continue
        if any(boxes_overlap(box, other, level.gap) for other in boxes):
            continue
        boxes.append(box)
    return SceneSpec(tuple(boxes), seed, extent, name)


def gen_scene_set(n: int, seed: int, difficulty: int = 1, extent: float = 50.0) -> list[SceneSpec]:
    """``n`` scenes drawn from independent child streams of ``seed``.

    Difficulty 0 is a single 4 m x 2 m box straight ahead at 10 m.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one scene, got {n}")
    if difficulty == 0:
        return [SceneSpec((SINGLE_BOX,), seed, extent, f"scene_{i:04d}") for i in range(n)]
    if difficulty not in DIFFICULTY:
        raise ConfigurationError(f"unknown difficulty {difficulty}; expected one of 0, {sorted(DIFFICULTY)}")
    children = np.random.SeedSequence(seed).spawn(n)
    return [sample_scene(np.random.default_rng(c), DIFFICULTY[difficulty], extent, seed, f"scene_{i:04d}")
            for i, c in enumerate(children)]
