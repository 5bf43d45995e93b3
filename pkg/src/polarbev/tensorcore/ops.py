"""Differentiable operations on :class:`Tensor`.

Every function takes Tensors (plain arrays and scalars are accepted as
constants), computes the forward result with numpy and, when a tape is
active and an input requires a gradient, records a closure computing the
vector-Jacobian product.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import ConfigurationError, DimensionError
from . import kinks
from .tensor import Tensor, record

PAD_MODES = ("zero", "circular")


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _t(b, a)
    b = _t(b)
    return _t(a, b), b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                             _unbroadcast(g, b.shape) if b.requires_grad else None))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape) if a.requires_grad else None,
                             _unbroadcast(-g, b.shape) if b.requires_grad else None))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), out, backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", (a, b), out, backward)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    kinks.note("relu", pos)
    out = np.maximum(x.data, 0)
    return record("relu", (x,), out, lambda g: (g * pos,))


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    kinks.note("abs", sign)
    return record("abs", (x,), np.abs(x.data), lambda g: (g * sign,))


def sum_reduce(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=x.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), out, backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_reduce(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record("transpose", (x,), out, lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) if t.requires_grad else None
                     for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]))

    return record("concat", tensors, out, backward)


def broadcast_add(x: Tensor | None, rows: Tensor | None = None, cols: Tensor | None = None) -> Tensor:
    """Add a ``[R x C]`` row table and/or an ``[A x C]`` column table onto ``[R x A x C]``.

    With ``x=None`` the result is the plain broadcast sum of the two tables.
    """
    if x is None:
        if rows is None or cols is None:
            raise DimensionError("broadcast_add: need x or both tables")
        if rows.ndim != 2 or cols.ndim != 2 or rows.shape[1] != cols.shape[1]:
            raise DimensionError(f"broadcast_add: row table {rows.shape} vs column table {cols.shape}")
        out = rows.data[:, None, :] + cols.data[None, :, :]
        inputs = (rows, cols)

        def backward(g):
            return g.sum(axis=1), g.sum(axis=0)

        return record("broadcast_add", inputs, out, backward)

    if x.ndim != 3:
        raise DimensionError(f"broadcast_add: expected [R x A x C], got {x.shape}")
    R, A, C = x.shape
    out = x.data
    if rows is not None:
        if rows.shape != (R, C):
            raise DimensionError(f"broadcast_add: row table {rows.shape} does not fit {x.shape}")
        out = out + rows.data[:, None, :]
    if cols is not None:
        if cols.shape != (A, C):
            raise DimensionError(f"broadcast_add: column table {cols.shape} does not fit {x.shape}")
        out = out + cols.data[None, :, :]
    inputs = tuple(t for t in (x, rows, cols) if t is not None)

    def backward(g):
        res = [g]
        if rows is not None:
            res.append(g.sum(axis=1))
        if cols is not None:
            res.append(g.sum(axis=0))
        return tuple(res)

    return record("broadcast_add", inputs, out, backward)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]`` along axis 0; the adjoint of :func:`scatter_rows`."""
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return record("take_rows", (x,), out, backward)


def scatter_rows(x: Tensor, index: np.ndarray, n: int) -> Tensor:
    """Place the rows of ``[M x C]`` at positions ``index`` of an ``[n x C]`` zero array.

    Repeated indices accumulate.
    """
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"scatter_rows: rows {x.shape} vs index {index.shape}")
    out = np.zeros((n, x.shape[1]), dtype=x.dtype)
    if np.all(index[1:] > index[:-1]):
        out[index] = x.data
    else:
        np.add.at(out, index, x.data)
    return record("scatter_rows", (x,), out, lambda g: (g[index],))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), out, backward)


def sparse_matmul(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """``matrix @ x`` for a constant sparse matrix and a dense ``[N x C]`` tensor."""
    if matrix.shape[1] != x.shape[0]:
        raise DimensionError(f"sparse_matmul: {matrix.shape} vs {x.shape}")
    out = np.asarray(matrix @ x.data, dtype=x.dtype)
    return record("sparse_matmul", (x,), out,
                  lambda g: (np.asarray(matrix.T @ g, dtype=x.dtype),))


# ---------------------------------------------------------------------------
# normalization


def normalize_channels(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance per channel (axis 0) over all other axes."""
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * out).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return record("normalize_channels", (x,), out.astype(x.dtype, copy=False), backward)


# ---------------------------------------------------------------------------
# convolution


def _pad_axis(a: np.ndarray, axis: int, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return a
    width = [(0, 0)] * a.ndim
    width[axis] = (p, p)
    return np.pad(a, width, mode="wrap" if mode == "circular" else "constant")


def _padded(xt: np.ndarray, pb: int, pr: int, mode_b: str, mode_r: str) -> np.ndarray:
    """Pad axes 1 then 0 of ``xt`` in one allocation; same values as two successive ``np.pad`` calls."""
    B, R = xt.shape[:2]
    if (mode_r == "circular" and pr > R) or (mode_b == "circular" and pb > B):
        return _pad_axis(_pad_axis(np.ascontiguousarray(xt), 1, pr, mode_r), 0, pb, mode_b)
    xp = np.zeros((B + 2 * pb, R + 2 * pr) + xt.shape[2:], dtype=xt.dtype)
    xp[pb:pb + B, pr:pr + R] = xt
    if pr and mode_r == "circular":
        xp[pb:pb + B, :pr] = xt[:, R - pr:]
        xp[pb:pb + B, pr + R:] = xt[:, :pr]
    if pb and mode_b == "circular":
        xp[:pb] = xp[B:B + pb]
        xp[pb + B:] = xp[pb:2 * pb]
    return xp


def _layout(pad_mode_h: str, pad_mode_w: str):
    """Axis order ``(batch, row, channel)`` for the batched contraction.

    The batch axis is the circular one when there is exactly one, so every
    position along it goes through an identical BLAS call.
    """
    if pad_mode_h == "circular" and pad_mode_w != "circular":
        return (1, 2, 0), (2, 3), pad_mode_h, pad_mode_w
    return (2, 1, 0), (3, 2), pad_mode_w, pad_mode_h


def _correlate(x: np.ndarray, kernel: np.ndarray, pad_mode_h: str, pad_mode_w: str):
    """Same-size cross-correlation of ``[C_in x H x W]`` with ``[C_out x C_in x kh x kw]``.

    One batched matmul per tap. Returns the output and the padded input in
    ``(batch, row, channel)`` layout, which the kernel gradient reuses.
    """
    to_bri, (kb_ax, kr_ax), mode_b, mode_r = _layout(pad_mode_h, pad_mode_w)
    per_position = pad_mode_h == "circular" and pad_mode_w == "circular"
    kb, kr = kernel.shape[kb_ax], kernel.shape[kr_ax]
    pb, pr = (kb - 1) // 2, (kr - 1) // 2
    xt = x.transpose(to_bri)
    B, R = xt.shape[:2]
    xp = _padded(xt, pb, pr, mode_b, mode_r)
    wk = np.ascontiguousarray(kernel.transpose(kb_ax, kr_ax, 1, 0), dtype=x.dtype)
    out = buf = None
    for a in range(kb):
        for b in range(kr):
            window = xp[a:a + B, b:b + R]
            if per_position:
                part = np.matmul(window[..., None, :], wk[a, b])[..., 0, :]
            elif out is None:
                out = np.matmul(window, wk[a, b])
                buf = np.empty_like(out)
                continue
            else:
                part = np.matmul(window, wk[a, b], out=buf)
            out = part if out is None else np.add(out, part, out=out)
    return np.ascontiguousarray(out.transpose(np.argsort(to_bri))), xp


def conv2d(x: Tensor, kernel: Tensor, pad_mode_h: str = "zero", pad_mode_w: str = "zero",
           bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation of ``[C_in x H x W]`` with ``[C_out x C_in x kh x kw]``.

    Padding is ``(k - 1) / 2`` per axis, zero or circular, so the spatial
    shape is preserved. The channel contraction is batched over a circular
    axis so every position along it goes through an identical BLAS call;
    that makes circular shifts along that axis commute with the
    convolution bit for bit. The input gradient is the correlation of the
    output gradient with the flipped, transposed kernel under the same
    padding, so it inherits the same property.
    """
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected [C,H,W] input and 4-d kernel, got {x.shape} and {kernel.shape}")
    C_in, H, W = x.shape
    C_out, k_in, kh, kw = kernel.shape
    if k_in != C_in:
        raise DimensionError(f"conv2d: input has {C_in} channels, kernel {kernel.shape} expects {k_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if pad_mode_h not in PAD_MODES or pad_mode_w not in PAD_MODES:
        raise ConfigurationError(f"conv2d: pad modes must be in {PAD_MODES}")
    if bias is not None and bias.shape != (C_out,):
        raise DimensionError(f"conv2d: bias {bias.shape} does not match {C_out} output channels")
    dtype = x.dtype
    out, xp = _correlate(x.data, kernel.data.astype(dtype, copy=False), pad_mode_h, pad_mode_w)
    if bias is not None:
        out += bias.data.astype(dtype, copy=False)[:, None, None]

    def backward(g):
        gx = gw = gbias = None
        if x.requires_grad:
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _correlate(g, flipped.astype(dtype, copy=False), pad_mode_h, pad_mode_w)
        if kernel.requires_grad:
            to_bri, (kb_ax, kr_ax), _, _ = _layout(pad_mode_h, pad_mode_w)
            gt = np.ascontiguousarray(g.transpose(to_bri)).reshape(-1, C_out)
            kb, kr = kernel.shape[kb_ax], kernel.shape[kr_ax]
            B, R = x.shape[to_bri[0]], x.shape[to_bri[1]]
            gwk = np.empty((kb, kr, C_in, C_out), dtype=dtype)
            for b in range(kr):
                cols = np.ascontiguousarray(xp[:, b:b + R]).reshape(-1, C_in)
                for a in range(kb):
                    gwk[a, b] = cols[a * R:(a + B) * R].T @ gt
            order = [0, 0, 0, 0]
            order[kb_ax], order[kr_ax], order[1], order[0] = 0, 1, 2, 3
            gw = np.ascontiguousarray(gwk.transpose(order))
        if bias is not None and bias.requires_grad:
            gbias = g.sum(axis=(1, 2))
        return (gx, gw) + ((gbias,) if bias is not None else ())

    inputs = (x, kernel) + ((bias,) if bias is not None else ())
    return record("conv2d", inputs, out, backward)


# ---------------------------------------------------------------------------
# pooling / resampling


def avg_pool2d(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 on ``[C x H x W]``; odd trailing rows/cols are dropped."""
    C, H, W = x.shape
    h, w = H // 2, W // 2
    if h == 0 or w == 0:
        raise DimensionError(f"avg_pool2d: input {x.shape} too small to pool")
    d = x.data
    out = (d[:, 0:2 * h:2, 0:2 * w:2] + d[:, 1:2 * h:2, 0:2 * w:2]
           + d[:, 0:2 * h:2, 1:2 * w:2] + d[:, 1:2 * h:2, 1:2 * w:2]) * d.dtype.type(0.25)

    def backward(g):
        gx = np.zeros_like(x.data)
        q = g * g.dtype.type(0.25)
        for a in (0, 1):
            for b in (0, 1):
                gx[:, a:2 * h:2, b:2 * w:2] = q
        return (gx,)

    return record("avg_pool2d", (x,), out, backward)


def upsample_nearest(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbour resize of ``[C x h x w]`` to ``[C x H x W]`` with ``H >= h``, ``W >= w``."""
    C, h, w = x.shape
    H, W = size
    if H < h or W < w:
        raise DimensionError(f"upsample_nearest: target {size} smaller than input {x.shape[1:]}")
    ih = (np.arange(H) * h) // H
    iw = (np.arange(W) * w) // W
    out = x.data[:, ih][:, :, iw]
    sh = np.searchsorted(ih, np.arange(h))
    sw = np.searchsorted(iw, np.arange(w))

    def backward(g):
        return (np.add.reduceat(np.add.reduceat(g, sh, axis=1), sw, axis=2),)

    return record("upsample_nearest", (x,), out, backward)


def bilinear_sample(feature: Tensor, points: Tensor) -> Tensor:
    """Sample ``[C x H x W]`` at ``N`` pixel coordinates ``(u, v)``; returns ``[N x C]``.

    Pixel centres sit at integer coordinates. Coordinates are clamped to
    ``[0, W-1] x [0, H-1]``; the gradient w.r.t. a clamped coordinate is 0.
    Gradients flow to the feature values and, if ``points`` requires it,
    to the coordinates.
    """
    if feature.ndim != 3 or points.ndim != 2 or points.shape[1] != 2:
        raise DimensionError(f"bilinear_sample: feature {feature.shape}, points {points.shape}")
    C, H, W = feature.shape
    N = points.shape[0]
    dtype = feature.dtype
    u = points.data[:, 0]
    v = points.data[:, 1]
    uc = np.clip(u, 0, W - 1)
    vc = np.clip(v, 0, H - 1)
    x0 = np.minimum(np.floor(uc), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(vc), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (uc - x0).astype(dtype)
    wy = (vc - y0).astype(dtype)
    in_u = (u >= 0) & (u <= W - 1)
    in_v = (v >= 0) & (v <= H - 1)
    kinks.note("bilinear", np.stack([x0, y0, in_u, in_v]))

    ia = y0 * W + x0
    ib = y0 * W + x1
    ic = y1 * W + x0
    id_ = y1 * W + x1
    weights = np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy], axis=1)
    cols = np.stack([ia, ib, ic, id_], axis=1)
    rows = np.repeat(np.arange(N), 4)
    S = sp.csr_matrix((weights.reshape(-1), (rows, cols.reshape(-1))), shape=(N, H * W))
    flat = feature.data.reshape(C, H * W)
    out = np.asarray(S @ flat.T, dtype=dtype)

    def backward(g):
        gf = gp = None
        if feature.requires_grad:
            gf = np.asarray(S.T @ g, dtype=dtype).T.reshape(C, H, W)
        if points.requires_grad:
            fa, fb, fc, fd = flat[:, ia].T, flat[:, ib].T, flat[:, ic].T, flat[:, id_].T
            d_wx = (1 - wy)[:, None] * (fb - fa) + wy[:, None] * (fd - fc)
            d_wy = (1 - wx)[:, None] * (fc - fa) + wx[:, None] * (fd - fb)
            gu = np.sum(g * d_wx, axis=1) * (in_u & (W > 1))
            gv = np.sum(g * d_wy, axis=1) * (in_v & (H > 1))
            gp = np.stack([gu, gv], axis=1).astype(points.dtype)
        return gf, gp

    return record("bilinear_sample", (feature, points), out, backward)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, target: np.ndarray, weight=None) -> Tensor:
    """Mean softmax cross-entropy; class axis 0, integer ``target`` shaped like ``logits.shape[1:]``.

    With per-class ``weight`` the mean is weighted: ``sum(w_t * nll) / sum(w_t)``.
    """
    target = np.asarray(target)
    if target.shape != logits.shape[1:]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    t = target[None].astype(np.int64)
    z = logits.data
    m = z.max(axis=0, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=0, keepdims=True)
    lse = (m + np.log(s))[0]
    picked = np.take_along_axis(z, t, axis=0)[0]
    if weight is None:
        w = None
        n = target.size
        out = np.asarray(np.mean(lse - picked), dtype=logits.dtype)
    else:
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (logits.shape[0],):
            raise DimensionError(f"cross_entropy: {weight.shape[0]} class weights for {logits.shape[0]} classes")
        w = weight[target]
        n = float(w.sum())
        out = np.asarray(np.sum(w * (lse - picked)) / n, dtype=logits.dtype)

    def backward(g):
        p = e / s
        np.put_along_axis(p, t, np.take_along_axis(p, t, axis=0) - 1.0, axis=0)
        if w is not None:
            p = p * w
        return (p * (g / n),)

    return record("cross_entropy", (logits,), out, backward)
