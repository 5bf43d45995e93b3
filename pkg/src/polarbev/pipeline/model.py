"""Polar BEV model: embedding, iterative height refinement, feature transform and head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .. import tensorcore as tc
from ..errors import ConfigurationError, DimensionError
from ..geometry import EPS_DEPTH, CameraRig
from ..tensorcore import Tensor, kinks
from ..tensorcore.tensor import record
from .config import PipelineConfig

SENTINEL = -1e6


# ---------------------------------------------------------------------------
# parameters


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _theta_prefixes(cfg: PipelineConfig) -> list[str]:
    if cfg.share_theta_across_iters:
        return ["theta.shared"] * cfg.n_iters
    return [f"theta.{t}" for t in range(cfg.n_iters)]


def init_params(cfg: PipelineConfig, seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameters for ``cfg``; a pure function of ``(cfg, seed)``."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    R, A = cfg.grid().shape
    C, Cf = cfg.C, cfg.feature_channels
    p: dict[str, np.ndarray] = {}

    if cfg.decompose_embedding:
        p["emb.rad"] = rng.standard_normal((R, C)) * np.sqrt(0.5)
        p["emb.ang"] = rng.standard_normal((A, C)) * np.sqrt(0.5)
    else:
        p["emb.full"] = rng.standard_normal((R, A, C))

    def block(name, c_in, c_out, k=3):
        p[f"{name}.w"] = _he(rng, (c_out, c_in, k, k), c_in * k * k)
        p[f"{name}.gamma"] = np.ones(c_out)
        p[f"{name}.beta"] = np.zeros(c_out)

    c_prev = cfg.image_channels
    for i, c in enumerate(cfg.encoder_channels):
        block(f"enc.{i}", c_prev, c)
        c_prev = c

    for prefix in dict.fromkeys(_theta_prefixes(cfg)):
        widths = cfg.theta_spec
        for li, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = li == len(widths) - 2
            # the last layer starts at zero so the first update keeps the hypothetical plane
            p[f"{prefix}.w{li}"] = np.zeros((a, b)) if last else _he(rng, (a, b), a)
            p[f"{prefix}.b{li}"] = np.zeros(b)

    for t in range(cfg.n_iters):
        block(f"fuse.{t}", C + Cf, C)

    c1, c2, c_out = cfg.head_spec
    block("head.down1", C, c1)
    block("head.down2", c1, c2)
    block("head.up1", c2 + c1, c1)
    block("head.up0", c1 + C, c_out)
    p["head.out.w"] = _he(rng, (5, c_out, 1, 1), c_out) * 0.1
    p["head.out.b"] = np.zeros(5)
    return {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True, name=k) for k, v in p.items()}


def param_shapes(cfg: PipelineConfig) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in init_params(cfg, 0).items()}


# ---------------------------------------------------------------------------
# embedding and heights


def compose_embedding(q_rad: Tensor, q_ang: Tensor) -> Tensor:
    """``q[j, k] = q_rad[j] + q_ang[k]`` as a ``[d_rad x d_ang x C]`` tensor."""
    return tc.broadcast_add(None, q_rad, q_ang)


def height_to_z(h, z_inf: float, z_sup: float):
    """Squash raw heights into the open interval ``(z_inf, z_sup)``.

    Accepts scalars, arrays or Tensors; Tensors stay on the tape.
    """
    if not z_inf < z_sup:
        raise ConfigurationError(f"height bounds need z_inf < z_sup, got ({z_inf}, {z_sup})")
    span = z_sup - z_inf
    if not isinstance(h, Tensor):
        s = expit(np.asarray(h, dtype=np.float64))
        z = np.clip(s * span + z_inf, np.nextafter(z_inf, z_sup), np.nextafter(z_sup, z_inf))
        return float(z) if z.ndim == 0 else z
    dt = h.dtype.type
    s = expit(h.data)
    z = np.clip(s * dt(span) + dt(z_inf), np.nextafter(dt(z_inf), dt(z_sup)), np.nextafter(dt(z_sup), dt(z_inf)))
    return record("height_to_z", (h,), z.astype(h.dtype, copy=False),
                  lambda g: (g * (s * (1 - s) * dt(span)),))


@dataclass
class HeightField:
    h: Tensor
    z: Tensor
    z_inf: float
    z_sup: float

    @classmethod
    def initial(cls, shape, cfg: PipelineConfig) -> "HeightField":
        h = Tensor(np.full(shape, cfg.h_hypo, dtype=np.dtype(cfg.dtype)))
        return cls(h, height_to_z(h, cfg.z_inf, cfg.z_sup), cfg.z_inf, cfg.z_sup)


class MLP:
    """Per-cell perceptron: relu between layers, linear output."""

    def __init__(self, weights: Sequence[Tensor], biases: Sequence[Tensor]):
        if len(weights) != len(biases) or not weights:
            raise ConfigurationError("MLP needs matching, non-empty weight and bias lists")
        for w0, w1 in zip(weights[:-1], weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ConfigurationError(f"MLP layer widths do not chain: {w0.shape} then {w1.shape}")
        self.weights = list(weights)
        self.biases = list(biases)

    @classmethod
    def from_params(cls, params: dict[str, Tensor], prefix: str) -> "MLP":
        n = sum(1 for k in params if k.startswith(prefix + ".w"))
        return cls([params[f"{prefix}.w{i}"] for i in range(n)], [params[f"{prefix}.b{i}"] for i in range(n)])

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = tc.add(tc.matmul(x, w), b)
            if i < len(self.weights) - 1:
                x = tc.relu(x)
        return x


def update_height(hf: HeightField, q: Tensor, theta: MLP) -> HeightField:
    """Residual update ``h <- theta(q) + h`` per cell, then re-squash into z."""
    if q.ndim != 3 or q.shape[:2] != hf.h.shape:
        raise DimensionError(f"update_height: q {q.shape} does not cover heights {hf.h.shape}")
    if q.shape[2] != theta.in_width or theta.out_width != 1:
        raise ConfigurationError(f"update_height: theta maps {theta.in_width}->{theta.out_width}, "
                                 f"needs {q.shape[2]}->1")
    R, A, C = q.shape
    delta = tc.reshape(theta(tc.reshape(q, (R * A, C))), (R, A))
    h = tc.add(hf.h, delta)
    return HeightField(h, height_to_z(h, hf.z_inf, hf.z_sup), hf.z_inf, hf.z_sup)


# ---------------------------------------------------------------------------
# 2D -> 3D transform


def project_heights(z: Tensor, xy: np.ndarray, cam, stride: int = 1) -> tuple[Tensor, np.ndarray]:
    """Feature-map coordinates of cells ``(x, y, z)`` seen by ``cam``.

    Returns ``[N x 2]`` coordinates on a map downsampled by ``stride``
    (pixel ``u`` maps to ``(u + 0.5) / stride - 0.5``) and the validity mask
    in the full-resolution image. Invalid rows hold 0 and carry no gradient.
    The gradient flows to ``z`` only.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    zf = z.data.reshape(-1).astype(np.float64)
    P = cam.projection
    a = P[:, 0][None] * xy[:, :1] + P[:, 1][None] * xy[:, 1:] + P[:, 3][None]
    b = P[:, 2]
    q = a + zf[:, None] * b[None]
    depth = q[:, 2]
    front = depth > EPS_DEPTH
    safe = np.where(front, depth, 1.0)
    u = q[:, 0] / safe
    v = q[:, 1] / safe
    valid = front & (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    kinks.note("view_mask", valid)
    s = float(stride)
    pts = np.where(valid[:, None], np.stack([(u + 0.5) / s - 0.5, (v + 0.5) / s - 0.5], axis=1), 0.0)
    du = np.where(valid, (b[0] * safe - q[:, 0] * b[2]) / (safe * safe * s), 0.0)
    dv = np.where(valid, (b[1] * safe - q[:, 1] * b[2]) / (safe * safe * s), 0.0)

    def backward(g):
        return ((g[:, 0] * du + g[:, 1] * dv).reshape(z.shape).astype(z.dtype),)

    return record("project_heights", (z,), pts.astype(z.dtype), backward), valid


def transform_features(grid, hf: HeightField | Tensor, rig: CameraRig, view_features: Sequence[Tensor],
                       feature_stride: int = 1) -> Tensor:
    """Masked sum over views of features bilinearly sampled where each cell projects.

    Returns ``[R x A x C_f]``; cells seen by no view are exactly zero.
    """
    if len(view_features) != len(rig):
        raise ConfigurationError(f"transform_features: {len(view_features)} feature maps for {len(rig)} views")
    if feature_stride <= 0:
        raise ConfigurationError("feature_stride must be positive")
    z = hf.z if isinstance(hf, HeightField) else hf
    if z.shape != tuple(grid.shape):
        raise DimensionError(f"transform_features: heights {z.shape} vs grid {grid.shape}")
    R, A = grid.shape
    n = R * A
    xy = grid.xy.reshape(n, 2)
    total = None
    for cam, feat in zip(rig, view_features):
        feat = tc.as_tensor(feat)
        pts, valid = project_heights(z, xy, cam, feature_stride)
        idx = np.flatnonzero(valid)
        if idx.size == 0:
            continue
        sub = tc.take_rows(pts, idx)
        part = tc.scatter_rows(tc.bilinear_sample(feat, sub), idx, n)
        total = part if total is None else tc.add(total, part)
    if total is None:
        C = view_features[0].shape[0]
        total = Tensor(np.zeros((n, C), dtype=tc.as_tensor(view_features[0]).dtype))
    return tc.reshape(total, (R, A, total.shape[1]))


# ---------------------------------------------------------------------------
# network blocks


def norm_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    y = tc.normalize_channels(x)
    return tc.add(tc.mul(y, tc.reshape(gamma, (-1, 1, 1))), tc.reshape(beta, (-1, 1, 1)))


def conv_block(params: dict[str, Tensor], name: str, x: Tensor, ring: bool) -> Tensor:
    """3x3 convolution, per-channel normalization with affine, relu."""
    y = tc.conv2d(x, params[f"{name}.w"], "zero", "circular" if ring else "zero")
    return tc.relu(norm_affine(y, params[f"{name}.gamma"], params[f"{name}.beta"]))


def sanitize_views(images: Sequence) -> list[Tensor]:
    """Replace no-hit sentinel pixels by zero."""
    out = []
    for im in images:
        data = im.data if isinstance(im, Tensor) else np.asarray(im)
        out.append(np.where(data <= SENTINEL / 2, 0.0, data))
    return out


def encode(params: dict[str, Tensor], images: Sequence, dtype=np.float64) -> list[Tensor]:
    """Tiny CNN on each view: four zero-padded conv blocks, pooled after the first three."""
    feats = []
    for im in sanitize_views(images):
        x = Tensor(np.asarray(im, dtype=dtype))
        for i in range(4):
            x = conv_block(params, f"enc.{i}", x, ring=False)
            if i < 3:
                x = tc.avg_pool2d(x)
        feats.append(x)
    return feats


def run_head(params: dict[str, Tensor], q: Tensor, ring: bool) -> Tensor:
    """Two-level encoder-decoder on ``[C x R x A]`` followed by a 1x1 projection to 5 maps."""
    _, R, A = q.shape
    x1 = conv_block(params, "head.down1", tc.avg_pool2d(q), ring)
    x2 = conv_block(params, "head.down2", tc.avg_pool2d(x1), ring)
    u1 = conv_block(params, "head.up1", tc.concat([tc.upsample_nearest(x2, x1.shape[1:]), x1]), ring)
    u0 = conv_block(params, "head.up0", tc.concat([tc.upsample_nearest(u1, (R, A)), q]), ring)
    return tc.conv2d(u0, params["head.out.w"], bias=params["head.out.b"])


@dataclass
class BEVOutput:
    seg_logits: Tensor
    centerness: Tensor
    offset: Tensor

    def numpy(self) -> dict[str, np.ndarray]:
        return {"seg_logits": self.seg_logits.data, "centerness": self.centerness.data,
                "offset": self.offset.data}


def initial_query(params: dict[str, Tensor], cfg: PipelineConfig) -> Tensor:
    """Embedding as ``[C x R x A]``."""
    if cfg.decompose_embedding:
        q = compose_embedding(params["emb.rad"], params["emb.ang"])
    else:
        q = params["emb.full"]
    return tc.transpose(q, (2, 0, 1))


def run_model(images: Sequence, rig: CameraRig, cfg: PipelineConfig, params: dict[str, Tensor],
              timings: dict | None = None) -> tuple[BEVOutput, list[HeightField]]:
    """Forward pass. Returns the head outputs and the height field before and after every iteration."""
    import time

    def tick(key, t0):
        if timings is not None:
            timings[key] = timings.get(key, 0.0) + time.perf_counter() - t0
        return time.perf_counter()

    if len(images) != len(rig):
        raise ConfigurationError(f"run_model: {len(images)} images for {len(rig)} cameras")
    dtype = np.dtype(cfg.dtype)
    grid = cfg.grid()
    ring = cfg.ring_conv and grid.circular_cols
    t0 = time.perf_counter()
    feats = encode(params, images, dtype)
    t0 = tick("encode", t0)

    q = initial_query(params, cfg)
    hf = HeightField.initial(grid.shape, cfg)
    trace = [hf]
    for t, prefix in enumerate(_theta_prefixes(cfg)):
        hf = update_height(hf, tc.transpose(q, (1, 2, 0)), MLP.from_params(params, prefix))
        trace.append(hf)
        f = transform_features(grid, hf, rig, feats, cfg.feature_stride)
        f = tc.transpose(f, (2, 0, 1))
        q = conv_block(params, f"fuse.{t}", tc.concat([q, f]), ring)
        t0 = tick(f"transform.{t}", t0)

    out = run_head(params, q, ring)
    tick("head", t0)
    seg = tc.take_rows(out, np.arange(0, 2))
    center = tc.sigmoid(tc.take_rows(out, np.arange(2, 3)))
    offset = tc.take_rows(out, np.arange(3, 5))
    return BEVOutput(seg, center, offset), trace
