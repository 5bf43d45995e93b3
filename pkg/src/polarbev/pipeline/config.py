"""Model configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError, ValidationError
from ..geometry import PolarGrid, RectGrid, build_polar_grid

CONFIG_SCHEMA = "polarbev.config/1"


@dataclass(frozen=True)
class PipelineConfig:
    d_rad: int = 100
    d_ang: int = 400
    r_max: float = 50 * math.sqrt(2)
    C: int = 64
    n_iters: int = 3
    z_inf: float = -2.0
    z_sup: float = 2.0
    h_hypo: float = 0.0
    # full widths of the height MLP, input first; the first must equal C and the last 1
    theta_spec: tuple[int, ...] = (64, 64, 1)
    share_theta_across_iters: bool = False
    # (half-res channels, quarter-res channels, decoder output channels)
    head_spec: tuple[int, int, int] = (32, 32, 32)
    encoder_channels: tuple[int, ...] = (16, 32, 32, 32)
    image_channels: int = 2
    feature_stride: int = 8
    # ablation knobs
    grid_kind: str = "polar"
    ring_conv: bool = True
    decompose_embedding: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("d_rad", "d_ang", "C", "n_iters", "image_channels", "feature_stride"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if not self.r_max > 0:
            raise ConfigurationError(f"r_max must be positive, got {self.r_max}")
        if not self.z_inf < self.z_sup:
            raise ConfigurationError(f"z_inf ({self.z_inf}) must be below z_sup ({self.z_sup})")
        widths = tuple(self.theta_spec)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ConfigurationError(f"theta_spec needs at least two positive widths, got {widths}")
        if widths[0] != self.C or widths[-1] != 1:
            raise ConfigurationError(f"theta_spec must map C={self.C} channels to 1, got {widths}")
        if len(self.head_spec) != 3 or any(c < 1 for c in self.head_spec):
            raise ConfigurationError(f"head_spec needs three positive channel counts, got {self.head_spec}")
        if len(self.encoder_channels) != 4 or any(c < 1 for c in self.encoder_channels):
            raise ConfigurationError("encoder_channels needs four positive channel counts")
        if self.feature_stride != 8:
            raise ConfigurationError("the encoder pools three times, so feature_stride must be 8")
        if self.grid_kind not in ("polar", "rect"):
            raise ConfigurationError(f"grid_kind must be 'polar' or 'rect', got {self.grid_kind!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        object.__setattr__(self, "theta_spec", widths)
        object.__setattr__(self, "head_spec", tuple(self.head_spec))
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))

    @property
    def feature_channels(self) -> int:
        return self.encoder_channels[-1]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def grid(self) -> PolarGrid | RectGrid:
        if self.grid_kind == "polar":
            return build_polar_grid(self.r_max, self.d_rad, self.d_ang)
        # equal cell count, square cells covering the square inscribed in r_max
        side = int(round(math.sqrt(self.d_rad * self.d_ang)))
        extent = self.r_max * math.sqrt(2)
        return RectGrid(extent, extent, extent / side)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict, path: str = "config") -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key == "schema":
                continue
            if key not in known:
                raise ValidationError(f"unknown field {key!r}", f"{path}.{key}")
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigurationError as exc:
            raise ValidationError(str(exc), path) from None
        except TypeError as exc:
            raise ValidationError(str(exc), path) from None


@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 2e-3
    weight_decay: float = 1e-7
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 2000
    schedule: str = "onecycle"
    grad_clip: float = 5.0
    eval_every: int = 100

    def __post_init__(self):
        if self.lr < 0 or self.steps < 0 or self.eval_every < 1:
            raise ConfigurationError("lr and steps must be non-negative, eval_every positive")
        if self.schedule not in ("constant", "onecycle"):
            raise ConfigurationError(f"schedule must be 'constant' or 'onecycle', got {self.schedule!r}")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs: model, optimizer, loss weights and seed."""

    model: PipelineConfig = field(default_factory=PipelineConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    lambda_center: float = 0.1
    lambda_offset: float = 0.1
    seed: int = 0
    setting: int = 2
    # CE weights for (background, foreground); (1, 1) is plain cross-entropy
    seg_class_weight: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        w = tuple(float(v) for v in self.seg_class_weight)
        if len(w) != 2 or min(w) <= 0:
            raise ConfigurationError(f"seg_class_weight needs two positive values, got {self.seg_class_weight}")
        object.__setattr__(self, "seg_class_weight", w)

    def to_json(self) -> str:
        d = {
            "schema": CONFIG_SCHEMA,
            "model": self.model.to_dict(),
            "optimizer": {**dataclasses.asdict(self.optimizer), "betas": list(self.optimizer.betas)},
            "lambda_center": self.lambda_center,
            "lambda_offset": self.lambda_offset,
            "seed": self.seed,
            "setting": self.setting,
            "seg_class_weight": list(self.seg_class_weight),
        }
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}", "config") from None
        if not isinstance(d, dict):
            raise ValidationError("expected a JSON object", "config")
        model = PipelineConfig.from_dict(d.get("model", {}), "config.model")
        opt = d.get("optimizer", {})
        try:
            optimizer = OptimizerSpec(**opt)
        except (TypeError, ConfigurationError) as exc:
            raise ValidationError(str(exc), "config.optimizer") from None
        extra = set(d) - {"schema", "model", "optimizer", "lambda_center", "lambda_offset", "seed", "setting",
                          "seg_class_weight"}
        if extra:
            raise ValidationError(f"unknown field {sorted(extra)[0]!r}", f"config.{sorted(extra)[0]}")
        try:
            return cls(model, optimizer, float(d.get("lambda_center", 0.1)), float(d.get("lambda_offset", 0.1)),
                       int(d.get("seed", 0)), int(d.get("setting", 2)),
                       tuple(d.get("seg_class_weight", (1.0, 1.0))))
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc), "config") from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())
