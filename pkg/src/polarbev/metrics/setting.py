from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError
from ..geometry import RectGrid


@dataclass(frozen=True)
class EvalSetting:
    """Rectangular evaluation raster centred on the ego vehicle."""

    extent_x: float
    extent_y: float
    resolution: float

    def __post_init__(self):
        # RectGrid performs the divisibility check
        self.grid()

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid().shape

    def grid(self) -> RectGrid:
        return RectGrid(self.extent_x, self.extent_y, self.resolution)

    @classmethod
    def preset(cls, number: int) -> "EvalSetting":
        if number == 1:
            return SETTING_1
        if number == 2:
            return SETTING_2
        raise ConfigurationError(f"unknown evaluation setting {number!r}; expected 1 or 2")


SETTING_1 = EvalSetting(100.0, 50.0, 0.25)
SETTING_2 = EvalSetting(100.0, 100.0, 0.5)
