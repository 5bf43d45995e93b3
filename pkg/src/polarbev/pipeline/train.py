"""Desk-scale training: data preparation, AdamW, the training loop and checkpoints."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import tensorcore as tc
from ..errors import TrainingError, ValidationError
from ..geometry import CameraRig
from ..metrics import EvalSetting, RectPrediction, evaluate
from ..synth import GTRasters, RenderChannelPlan, SceneSpec, rasterize_gt, render_views
from ..tensorcore import Tensor
from .config import OptimizerSpec, PipelineConfig, RunConfig
from .loss import compute_loss
from .model import init_params, param_shapes, run_model
from .remap import remap_polar_to_rect

CHECKPOINT_SCHEMA = "polarbev.checkpoint/1"
TRACE_SCHEMA = "polarbev.trace/1"


@dataclass
class SceneData:
    """One training scene: rendered views, targets on the eval raster and heights on the model grid."""

    name: str
    images: list[np.ndarray]
    gt: GTRasters
    grid_fg: np.ndarray
    grid_height: np.ndarray


def rasterize_on_grid(scene: SceneSpec, grid) -> tuple[np.ndarray, np.ndarray]:
    """Foreground mask and surface height at every cell centre of ``grid`` (ground is 0)."""
    x, y = grid.xy[..., 0], grid.xy[..., 1]
    height = np.zeros(grid.shape)
    fg = np.zeros(grid.shape, dtype=bool)
    for box in scene.boxes:
        inside = box.contains(x, y)
        fg |= inside
        height[inside] = box.top
    return fg, height


def prepare_scenes(scenes: Sequence[SceneSpec], rig: CameraRig, cfg: PipelineConfig, setting: EvalSetting,
                   plan: RenderChannelPlan | None = None) -> list[SceneData]:
    plan = plan or RenderChannelPlan()
    if len(plan.roles) != cfg.image_channels:
        raise ValidationError(f"render plan has {len(plan.roles)} channels, model expects {cfg.image_channels}",
                              "config.model.image_channels")
    grid = cfg.grid()
    out = []
    for i, scene in enumerate(scenes):
        images, _ = render_views(scene, rig, plan)
        fg, height = rasterize_on_grid(scene, grid)
        out.append(SceneData(scene.name or f"scene_{i:04d}", images, rasterize_gt(scene, setting), fg, height))
    return out


def forward_rect(params: dict[str, Tensor], cfg: PipelineConfig, rig: CameraRig, images, setting: EvalSetting,
                 timings: dict | None = None):
    """Model outputs remapped to the setting's raster, plus the height trace."""
    out, trace = run_model(images, rig, cfg, params, timings)
    grid = cfg.grid()
    t0 = time.perf_counter()
    seg = remap_polar_to_rect(out.seg_logits, grid, setting)
    cen = remap_polar_to_rect(out.centerness, grid, setting)
    off = remap_polar_to_rect(out.offset, grid, setting)
    if timings is not None:
        timings["remap"] = timings.get("remap", 0.0) + time.perf_counter() - t0
    return (seg, cen, off), trace


def height_errors(trace, data: SceneData) -> list[float]:
    """Mean |z - true surface height| over foreground model cells, for every entry of the trace."""
    if not data.grid_fg.any():
        return [0.0] * len(trace)
    return [float(np.mean(np.abs(hf.z.data[data.grid_fg] - data.grid_height[data.grid_fg]))) for hf in trace]


def evaluate_params(params, cfg: PipelineConfig, rig: CameraRig, data: Sequence[SceneData], setting: EvalSetting,
                    center_thresh: float = 0.3, nms_radius: float = 2.0) -> dict:
    """Metric report over ``data`` with the mean height error per iteration attached."""
    preds, errs = [], []
    for d in data:
        (seg, cen, off), trace = forward_rect(params, cfg, rig, d.images, setting)
        preds.append(RectPrediction.from_logits(seg.data, cen.data, off.data))
        errs.append(height_errors(trace, d))
    report = evaluate(preds, [d.gt for d in data], setting, center_thresh, nms_radius, [d.name for d in data])
    report["height_error"] = np.mean(np.array(errs), axis=0).tolist()
    return report


def lr_at(spec: OptimizerSpec, step: int) -> float:
    """Learning rate for 0-based ``step``.

    The one-cycle rule warms up over the first 30% of steps from ``lr / 25``
    with a cosine ramp, then anneals with a cosine to ``lr / 1e4``.
    """
    if spec.schedule == "constant" or spec.steps <= 1:
        return spec.lr
    warm = max(1, int(0.3 * spec.steps))
    lo, hi, end = spec.lr / 25.0, spec.lr, spec.lr / 1e4
    if step < warm:
        p = step / warm
        return lo + (hi - lo) * 0.5 * (1 - math.cos(math.pi * p))
    p = (step - warm) / max(1, spec.steps - 1 - warm)
    return end + (hi - end) * 0.5 * (1 + math.cos(math.pi * min(p, 1.0)))


class AdamW:
    """Adam with decoupled weight decay, applied in place to parameter arrays."""

    def __init__(self, params: dict[str, Tensor], spec: OptimizerSpec):
        self.spec = spec
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> float:
        """One update; returns the global gradient norm before clipping."""
        b1, b2 = self.spec.betas
        self.t += 1
        norm = math.sqrt(math.fsum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        scale = 1.0
        if self.spec.grad_clip > 0 and norm > self.spec.grad_clip:
            scale = self.spec.grad_clip / norm
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            g = g * scale
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.spec.weight_decay:
                p.data *= 1 - lr * self.spec.weight_decay
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.spec.eps)).astype(p.dtype)
        return norm


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    trace: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def trace_json(self) -> str:
        return json.dumps({"schema": TRACE_SCHEMA, "evals": self.trace, "losses": self.losses,
                           "seconds": self.seconds}, indent=2)


def _eval_entry(step, params, cfg, rig, data, setting) -> dict:
    rep = evaluate_params(params, cfg, rig, data, setting)
    agg = rep["aggregate"]
    return {"step": step, "iou": agg["iou"], "pq": agg["pq"], "rq": agg["rq"], "sq": agg["sq"],
            "height_error": rep["height_error"]}


def train_toy(data: Sequence[SceneData], run: RunConfig, rig: CameraRig, setting: EvalSetting,
              params: dict[str, Tensor] | None = None,
              log: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on ``data`` for ``run.optimizer.steps`` single-scene steps.

    Scene order is a seeded permutation per epoch. Metrics on the training
    scenes are recorded before the first step, every ``eval_every`` steps
    and after the last one. A non-finite loss raises :class:`TrainingError`.
    """
    if not data:
        raise ValidationError("train_toy needs at least one scene", "data")
    cfg, spec = run.model, run.optimizer
    params = params if params is not None else init_params(cfg, run.seed)
    for p in params.values():
        p.requires_grad = True
    opt = AdamW(params, spec)
    rng = np.random.default_rng(run.seed)
    result = TrainResult(params)
    start = time.perf_counter()
    result.trace.append(_eval_entry(0, params, cfg, rig, data, setting))
    if log:
        log(result.trace[-1])
    order: list[int] = []
    for step in range(spec.steps):
        if not order:
            order = rng.permutation(len(data)).tolist()
        d = data[order.pop()]
        with tc.Tape() as tape:
            (seg, cen, off), _ = forward_rect(params, cfg, rig, d.images, setting)
            loss, _ = compute_loss(seg, cen, off, d.gt.seg, d.gt.centerness, d.gt.offset,
                                   run.lambda_center, run.lambda_offset, run.seg_class_weight)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}", step)
        for p in params.values():
            p.grad = None
        tape.backward(loss)
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        opt.step(params, grads, lr_at(spec, step))
        result.losses.append(value)
        done = step + 1
        if done % spec.eval_every == 0 or done == spec.steps:
            entry = _eval_entry(done, params, cfg, rig, data, setting)
            entry["loss"] = value
            entry["seconds"] = time.perf_counter() - start
            result.trace.append(entry)
            if log:
                log(entry)
    result.seconds = time.perf_counter() - start
    return result


def save_checkpoint(path: str | Path, params: dict[str, Tensor], cfg: PipelineConfig) -> Path:
    """Directory with one tensor file per parameter and a manifest embedding the config."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(params)
    for k in names:
        tc.save_tensor(path / f"{k}.tensor", params[k], name=k)
    manifest = {"schema": CHECKPOINT_SCHEMA, "config": cfg.to_dict(), "params": names}
    (path / "checkpoint.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path: str | Path, cfg: PipelineConfig | None = None) -> tuple[dict[str, Tensor], PipelineConfig]:
    """Load parameters and validate every shape against the embedded (or given) config."""
    path = Path(path)
    try:
        manifest = json.loads((path / "checkpoint.json").read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid checkpoint manifest: {exc}", "checkpoint") from None
    if manifest.get("schema") != CHECKPOINT_SCHEMA:
        raise ValidationError(f"unsupported checkpoint schema {manifest.get('schema')!r}", "checkpoint.schema")
    cfg = cfg or PipelineConfig.from_dict(manifest.get("config", {}), "checkpoint.config")
    shapes = param_shapes(cfg)
    stored = set(manifest.get("params", []))
    missing = sorted(set(shapes) - stored)
    if missing:
        raise ValidationError(f"checkpoint lacks parameter {missing[0]!r}", f"params.{missing[0]}")
    params = {}
    for k, shape in shapes.items():
        arr = tc.load_tensor(path / f"{k}.tensor")
        if arr.shape != tuple(shape):
            raise ValidationError(f"shape {arr.shape} does not match config shape {tuple(shape)}", f"params.{k}")
        params[k] = Tensor(arr.astype(np.dtype(cfg.dtype)), name=k)
    return params, cfg
