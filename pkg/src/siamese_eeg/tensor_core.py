"""Dense layer primitives with hand-written forward and backward passes.

Activations are ``Tensor3`` arrays laid out as ``(height, width, channels)``.
Every layer function also accepts a leading batch axis ``(N, H, W, C)`` and
returns an array of matching rank; the encoder uses the batched form.

Forward functions come in two flavours: ``conv2d`` returns only the output,
``conv2d_forward`` additionally returns a :class:`LayerContext` that
:func:`backward` consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, RejectedInputError, UsageError

PoolMode = Literal["valid", "ceil", "same"]


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_top: int = 0
    pad_bottom: int = 0
    pad_left: int = 0
    pad_right: int = 0
    out_channels: int | None = None

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.stride_h, self.stride_w) < 1:
            raise RejectedInputError("kernel and stride sizes must be >= 1")
        if min(self.pad_top, self.pad_bottom, self.pad_left, self.pad_right) < 0:
            raise RejectedInputError("padding must be non-negative")

    def output_hw(self, in_h: int, in_w: int) -> tuple[int, int]:
        span_h = in_h + self.pad_top + self.pad_bottom - self.kernel_h
        span_w = in_w + self.pad_left + self.pad_right - self.kernel_w
        if span_h < 0 or span_w < 0:
            raise RejectedInputError(
                f"kernel {self.kernel_h}x{self.kernel_w} larger than padded input "
                f"{in_h}x{in_w}"
            )
        return span_h // self.stride_h + 1, span_w // self.stride_w + 1

    @classmethod
    def same(cls, kernel_h: int, kernel_w: int, out_channels: int | None = None):
        """Stride-1 geometry that preserves spatial size (extra pad goes bottom/right)."""
        top, left = (kernel_h - 1) // 2, (kernel_w - 1) // 2
        return cls(kernel_h, kernel_w, 1, 1, top, kernel_h - 1 - top,
                   left, kernel_w - 1 - left, out_channels)


@dataclass(frozen=True)
class PoolGeometry:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    mode: PoolMode = "valid"

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.stride_h, self.stride_w) < 1:
            raise RejectedInputError("kernel and stride sizes must be >= 1")
        if self.mode not in ("valid", "ceil", "same"):
            raise RejectedInputError(f"unknown pooling mode {self.mode!r}")
        if self.mode == "same" and (self.stride_h, self.stride_w) != (1, 1):
            raise RejectedInputError("'same' pooling requires stride 1")

    def _axis(self, n: int, k: int, s: int) -> tuple[int, int, int]:
        """Return (out, pad_before, pad_after) along one axis."""
        if self.mode == "same":
            before = (k - 1) // 2
            return n, before, k - 1 - before
        if n < k:
            raise RejectedInputError(f"pool window {k} larger than input extent {n}")
        if self.mode == "valid":
            return (n - k) // s + 1, 0, 0
        out = -(-(n - k) // s) + 1
        # the last window must start on a real cell
        if (out - 1) * s >= n:
            out -= 1
        return out, 0, max(0, (out - 1) * s + k - n)

    def layout(self, in_h: int, in_w: int) -> tuple[int, int, tuple[int, int, int, int]]:
        """Output height, width and (top, bottom, left, right) padding."""
        oh, top, bottom = self._axis(in_h, self.kernel_h, self.stride_h)
        ow, left, right = self._axis(in_w, self.kernel_w, self.stride_w)
        return oh, ow, (top, bottom, left, right)


@dataclass
class LayerContext:
    """Values cached by a forward call for the matching backward call."""

    kind: str
    batched: bool
    saved: dict = field(default_factory=dict)


@dataclass
class LayerGrad:
    input: np.ndarray | None
    params: dict[str, np.ndarray] = field(default_factory=dict)


def _batch4(x, name="input") -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise RejectedInputError(f"{name} must be rank 3 (H, W, C) or 4 (N, H, W, C), got {x.shape}")


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite value in {what}")


def _unbatch(x: np.ndarray, batched: bool) -> np.ndarray:
    return x if batched else x[0]


# --- convolution -----------------------------------------------------------

def conv2d_forward(x, kernels, bias, geom: ConvGeometry,
                   need_input_grad: bool = True) -> tuple[np.ndarray, LayerContext]:
    x4, batched = _batch4(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernels.ndim != 4:
        raise RejectedInputError(f"kernels must be rank 4 (O, kh, kw, C), got {kernels.shape}")
    n_out, kh, kw, c_in = kernels.shape
    if (kh, kw) != (geom.kernel_h, geom.kernel_w):
        raise RejectedInputError(f"kernel shape {(kh, kw)} disagrees with geometry")
    if geom.out_channels is not None and geom.out_channels != n_out:
        raise RejectedInputError("kernel count disagrees with geometry out_channels")
    if x4.shape[3] != c_in:
        raise RejectedInputError(f"input has {x4.shape[3]} channels, kernels expect {c_in}")
    if bias.shape != (n_out,):
        raise RejectedInputError(f"bias must have shape ({n_out},), got {bias.shape}")
    _check_finite(x4, "conv2d input")
    _check_finite(kernels, "conv2d kernels")

    n, h, w, _ = x4.shape
    ho, wo = geom.output_hw(h, w)
    xp = np.pad(x4, ((0, 0), (geom.pad_top, geom.pad_bottom),
                     (geom.pad_left, geom.pad_right), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::geom.stride_h, ::geom.stride_w][:, :ho, :wo]
    # (N, ho, wo, C, kh, kw) -> rows of (kh, kw, C) patches
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c_in)
    kmat = kernels.reshape(n_out, -1)
    out = (cols @ kmat.T + bias).reshape(n, ho, wo, n_out)
    ctx = LayerContext("conv2d", batched, {
        "cols": cols, "kernels": kernels, "geom": geom,
        "in_shape": x4.shape, "padded_hw": xp.shape[1:3],
        "need_input_grad": need_input_grad, "out_shape": out.shape,
    })
    return _unbatch(out, batched), ctx


def conv2d(x, kernels, bias, geom: ConvGeometry) -> np.ndarray:
    """Cross-correlation of ``x`` with ``kernels`` (no flip) plus per-channel bias."""
    return conv2d_forward(x, kernels, bias, geom, need_input_grad=False)[0]


def _conv2d_backward(ctx: LayerContext, g: np.ndarray) -> LayerGrad:
    s = ctx.saved
    kernels, geom = s["kernels"], s["geom"]
    n_out, kh, kw, c_in = kernels.shape
    n, h, w, _ = s["in_shape"]
    g2 = g.reshape(-1, n_out)
    d_kernels = (g2.T @ s["cols"]).reshape(kernels.shape)
    d_bias = g2.sum(axis=0)
    d_input = None
    if s["need_input_grad"]:
        ho, wo = g.shape[1:3]
        dcols = (g2 @ kernels.reshape(n_out, -1)).reshape(n, ho, wo, kh, kw, c_in)
        hp, wp = s["padded_hw"]
        dxp = np.zeros((n, hp, wp, c_in))
        sh, sw = geom.stride_h, geom.stride_w
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dcols[:, :, :, i, j, :]
        d_input = dxp[:, geom.pad_top:geom.pad_top + h, geom.pad_left:geom.pad_left + w, :]
        d_input = _unbatch(np.ascontiguousarray(d_input), ctx.batched)
    return LayerGrad(d_input, {"kernels": d_kernels, "bias": d_bias})


# --- max pooling -----------------------------------------------------------

def maxpool_forward(x, geom: PoolGeometry) -> tuple[np.ndarray, LayerContext]:
    x4, batched = _batch4(x)
    n, h, w, c = x4.shape
    oh, ow, pads = geom.layout(h, w)
    top, bottom, left, right = pads
    xp = np.pad(x4, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=-np.inf)
    kh, kw = geom.kernel_h, geom.kernel_w
    sh, sw = geom.stride_h, geom.stride_w
    out = np.empty((n, oh, ow, c))
    # window-cell code i * kw + j of the winner
    pos = np.zeros((n, oh, ow, c), dtype=np.int16)
    better = np.empty(out.shape, dtype=bool)
    shift = np.empty(out.shape, dtype=np.int16)
    # scan window cells in row-major order; strict '>' keeps the first maximum
    for i in range(kh):
        for j in range(kw):
            cand = xp[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :]
            if i == 0 and j == 0:
                out[...] = cand
                continue
            np.greater(cand, out, out=better)
            np.maximum(out, cand, out=out)
            np.subtract(np.int16(i * kw + j), pos, out=shift)
            shift *= better
            pos += shift
    ctx = LayerContext("maxpool", batched, {"pos": pos, "geom": geom, "pads": pads,
                                              "in_shape": x4.shape, "out_shape": out.shape})
    return _unbatch(out, batched), ctx


def _argmax_map(ctx: LayerContext) -> np.ndarray:
    s = ctx.saved
    geom, pos = s["geom"], s["pos"].astype(np.int64)
    _, h, w, c = s["in_shape"]
    _, oh, ow, _ = s["out_shape"]
    top, _, left, _ = s["pads"]
    rows = np.arange(oh)[:, None, None] * geom.stride_h + pos // geom.kernel_w - top
    cols = np.arange(ow)[None, :, None] * geom.stride_w + pos % geom.kernel_w - left
    return _unbatch((rows * w + cols) * c + np.arange(c), ctx.batched)


def maxpool(x, geom: PoolGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Window maxima and, per output cell, the flat input index that won.

    The flat index addresses one ``(H, W, C)`` sample in row-major order.
    Padding cells hold ``-inf`` so they never win; ties go to the first cell
    in row-major order.
    """
    out, ctx = maxpool_forward(x, geom)
    return out, _argmax_map(ctx)


def _maxpool_backward(ctx: LayerContext, g: np.ndarray) -> LayerGrad:
    s = ctx.saved
    geom, pos = s["geom"], s["pos"]
    n, h, w, c = s["in_shape"]
    _, oh, ow, _ = s["out_shape"]
    top, bottom, left, right = s["pads"]
    sh, sw = geom.stride_h, geom.stride_w
    dxp = np.zeros((n, h + top + bottom, w + left + right, c))
    for i in range(geom.kernel_h):
        for j in range(geom.kernel_w):
            routed = g * (pos == i * geom.kernel_w + j)
            dxp[:, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw, :] += routed
    d = np.ascontiguousarray(dxp[:, top:top + h, left:left + w, :])
    return LayerGrad(_unbatch(d, ctx.batched))


# --- elementwise / dense / reshape -----------------------------------------

def relu_forward(x) -> tuple[np.ndarray, LayerContext]:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), LayerContext("relu", x.ndim == 4, {"input": x, "out_shape": x.shape})


def relu(x) -> np.ndarray:
    return relu_forward(x)[0]


def _relu_backward(ctx: LayerContext, g: np.ndarray) -> LayerGrad:
    # derivative at exactly 0 is taken as 0
    return LayerGrad(g * (ctx.saved["input"] > 0.0))


def dense_forward(x, weights, bias) -> tuple[np.ndarray, LayerContext]:
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2:
        raise RejectedInputError(f"weights must be a matrix, got shape {weights.shape}")
    m, n_in = weights.shape
    if x.ndim not in (1, 2) or x.shape[-1] != n_in:
        raise RejectedInputError(f"input shape {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (m,):
        raise RejectedInputError(f"bias must have shape ({m},), got {bias.shape}")
    _check_finite(x, "dense input")
    out = x @ weights.T + bias
    return out, LayerContext("dense", x.ndim == 2, {"input": x, "weights": weights,
                                               "out_shape": out.shape})


def dense(x, weights, bias) -> np.ndarray:
    """``weights @ x + bias``; ``x`` may also be a batch of row vectors."""
    return dense_forward(x, weights, bias)[0]


def _dense_backward(ctx: LayerContext, g: np.ndarray) -> LayerGrad:
    x, weights = ctx.saved["input"], ctx.saved["weights"]
    if ctx.batched:
        dw, db = g.T @ x, g.sum(axis=0)
    else:
        dw, db = np.outer(g, x), g.copy()
    return LayerGrad(g @ weights, {"weights": dw, "bias": db})


def flatten_forward(x) -> tuple[np.ndarray, LayerContext]:
    x4, batched = _batch4(x)
    out = x4.reshape(x4.shape[0], -1)
    return _unbatch(out, batched), LayerContext("flatten", batched, {"in_shape": x4.shape,
                                                                    "out_shape": out.shape})


def flatten(x) -> np.ndarray:
    """Row-major (height, width, channel) linearisation."""
    return flatten_forward(x)[0]


def unflatten(v, shape: tuple[int, int, int]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    size = math.prod(shape)
    if v.shape[-1] != size:
        raise RejectedInputError(f"vector length {v.shape[-1]} != {size}")
    return v.reshape(v.shape[:-1] + tuple(shape))


def _flatten_backward(ctx: LayerContext, g: np.ndarray) -> LayerGrad:
    shape = ctx.saved["in_shape"]
    return LayerGrad(_unbatch(g.reshape(shape), ctx.batched))


_BACKWARD = {
    "conv2d": _conv2d_backward,
    "maxpool": _maxpool_backward,
    "relu": _relu_backward,
    "dense": _dense_backward,
    "flatten": _flatten_backward,
}



def backward(ctx: LayerContext, upstream) -> LayerGrad:
    """Chain rule through one layer given its cached forward context."""
    if not isinstance(ctx, LayerContext) or ctx.kind not in _BACKWARD:
        raise UsageError("backward needs a context produced by a forward call")
    g = np.asarray(upstream, dtype=np.float64)
    if ctx.kind in ("conv2d", "maxpool", "flatten") and not ctx.batched:
        g = g[None]
    expected = ctx.saved["out_shape"]
    if g.shape != expected:
        raise UsageError(f"upstream gradient shape {g.shape} != forward output shape {expected}")
    return _BACKWARD[ctx.kind](ctx, g)


# --- verification harness --------------------------------------------------

def grad_check(fn: Callable[[np.ndarray], float], params, analytic, step: float = 1e-5,
               indices=None) -> float:
    """Largest relative error between ``analytic`` and central differences of ``fn``.

    ``fn`` maps an array shaped like ``params`` to a scalar. ``indices``
    restricts the check to a subset of flat positions. The step for a
    coordinate is ``step * max(1, |value|)``, and the difference quotient is
    taken over the perturbation that floating point actually realised.
    """
    if not step > 0:
        raise RejectedInputError("finite-difference step must be positive")
    theta = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = theta.reshape(-1)
    if analytic.size != flat.size:
        raise RejectedInputError("analytic gradient size differs from parameter size")
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        hi, lo = orig + h, orig - h
        flat[i] = hi
        f_plus = fn(theta)
        flat[i] = lo
        f_minus = fn(theta)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (hi - lo)
        if not (math.isfinite(numeric) and math.isfinite(analytic[i])):
            raise NumericError(f"non-finite gradient at parameter {i}")
        denom = max(abs(analytic[i]), abs(numeric), 1e-12)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
