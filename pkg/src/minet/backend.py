"""Kernel backend selection.

Two lanes implement the hot kernels (convolution and bilinear resize):

* ``minet._kernels`` — Cython extension with direct C loops, built by
  setup.py when a toolchain is present;
* this module's numpy implementations (im2col + matmul), always available.

The lane is chosen at import time. ``MINET_BACKEND`` forces it:
``compiled``, ``python`` or ``auto`` (default). Both lanes are
deterministic; they may differ by float rounding only (summation order).
Within the compiled lane, only depthwise convolutions actually run in C —
dense/pointwise convolutions are GEMMs and stay on the BLAS-backed numpy
path, which benchmarks faster for them (see benchmarks/).

``MINET_THREADS`` caps BLAS/OpenMP parallelism; it is exported to the
usual thread-count environment variables before numpy spins up a pool.
"""
from __future__ import annotations

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    if "MINET_THREADS" in os.environ:
        os.environ.setdefault(_var, os.environ["MINET_THREADS"])

import numpy as np

try:
    from minet import _kernels as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("MINET_BACKEND", "auto").lower()
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(f"MINET_BACKEND must be auto|compiled|python, got {_requested!r}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("MINET_BACKEND=compiled but the minet._kernels extension is not built")

USE_COMPILED = _compiled is not None and _requested != "python"


def backend_name() -> str:
    return "compiled" if USE_COMPILED else "python"


class MacRecorder:
    """Collects per-call multiply-accumulate counts from the conv kernels.

    The count is derived from the actual loop bounds the kernel executes,
    so the profiler can cross-check it against closed-form cost formulas.
    """

    def __init__(self):
        self.enabled = False
        self.records = []  # (label, macs)
        self._label = "?"

    def start(self):
        self.enabled = True
        self.records = []

    def stop(self):
        self.enabled = False

    def set_label(self, label):
        self._label = label

    def add(self, macs):
        if self.enabled:
            self.records.append((self._label, macs))

    def total(self):
        return sum(m for _, m in self.records)


mac_recorder = MacRecorder()


class AuxCounter:
    """Element counts for ops excluded from the headline MAC total
    (normalization, activations, resampling)."""

    def __init__(self):
        self.enabled = False
        self.counts = {}

    def start(self):
        self.enabled = True
        self.counts = {}

    def stop(self):
        self.enabled = False

    def add(self, kind, n):
        if self.enabled:
            self.counts[kind] = self.counts.get(kind, 0) + int(n)


aux_counter = AuxCounter()


def conv_out_size(size, k, stride, padding, dilation):
    """Output spatial extent of a convolution along one axis."""
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(x, k, stride, padding, dilation):
    """(n,c,h,w) -> (n, c, k*k, oh*ow) patch matrix."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, stride, padding, dilation)
    ow = conv_out_size(w, k, stride, padding, dilation)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        y0 = i * dilation
        for j in range(k):
            x0 = j * dilation
            cols[:, :, i, j] = x[:, :, y0:y0 + stride * oh:stride, x0:x0 + stride * ow:stride]
    return cols.reshape(n, c, k * k, oh * ow), oh, ow


def _col2im(dcols, x_shape, k, stride, padding, dilation, oh, ow):
    """Adjoint of _im2col: scatter-add patches back onto the input grid."""
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, c, k, k, oh, ow)
    hp, wp = h + 2 * padding, w + 2 * padding
    dx = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for i in range(k):
        y0 = i * dilation
        for j in range(k):
            x0 = j * dilation
            dx[:, :, y0:y0 + stride * oh:stride, x0:x0 + stride * ow:stride] += dcols[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:hp - padding, padding:wp - padding]
    return dx


def _np_conv2d_forward(x, w, bias, stride, padding, dilation, groups):
    n, c_in, _, _ = x.shape
    c_out, cig, k, _ = w.shape
    cols, oh, ow = _im2col(x, k, stride, padding, dilation)
    cols = cols.reshape(n, groups, cig, k * k, oh * ow)
    cols = cols.reshape(n, groups, cig * k * k, oh * ow)
    wg = w.reshape(groups, c_out // groups, cig * k * k)
    y = np.matmul(wg, cols)  # (n, g, c_out/g, oh*ow)
    y = y.reshape(n, c_out, oh, ow)
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def _np_conv2d_backward_input(dy, w, x_shape, stride, padding, dilation, groups):
    n = x_shape[0]
    c_out, cig, k, _ = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    wg = w.reshape(groups, c_out // groups, cig * k * k)
    dyg = dy.reshape(n, groups, c_out // groups, oh * ow)
    dcols = np.matmul(wg.transpose(0, 2, 1), dyg)  # (n, g, cig*k*k, oh*ow)
    dcols = dcols.reshape(n, groups * cig, k * k, oh * ow)
    return _col2im(dcols, x_shape, k, stride, padding, dilation, oh, ow)


def _np_conv2d_backward_weight(x, dy, w_shape, stride, padding, dilation, groups):
    n = x.shape[0]
    c_out, cig, k, _ = w_shape
    oh, ow = dy.shape[2], dy.shape[3]
    cols, _, _ = _im2col(x, k, stride, padding, dilation)
    cols = cols.reshape(n, groups, cig * k * k, oh * ow)
    dyg = dy.reshape(n, groups, c_out // groups, oh * ow)
    dw = np.matmul(dyg, cols.transpose(0, 1, 3, 2)).sum(axis=0)  # (g, c_out/g, cig*k*k)
    return dw.reshape(c_out, cig, k, k)


def _bilinear_coords(in_size, out_size, dtype):
    """Half-pixel-center source sampling grid: lo/hi indices and hi weight."""
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (src - lo).astype(dtype)
    return lo, hi, frac


def _np_resize_bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    y_lo, y_hi, fy = _bilinear_coords(h, out_h, x.dtype)
    x_lo, x_hi, fx = _bilinear_coords(w, out_w, x.dtype)
    top = x[:, :, y_lo, :]
    bot = x[:, :, y_hi, :]
    rows = top + fy[None, None, :, None] * (bot - top)  # (n,c,out_h,w)
    left = rows[:, :, :, x_lo]
    right = rows[:, :, :, x_hi]
    return left + fx[None, None, None, :] * (right - left)


def _np_resize_bilinear_backward(dy, in_h, in_w):
    n, c, oh, ow = dy.shape
    y_lo, y_hi, fy = _bilinear_coords(in_h, oh, dy.dtype)
    x_lo, x_hi, fx = _bilinear_coords(in_w, ow, dy.dtype)
    # undo the column lerp
    drows = np.zeros((n, c, oh, in_w), dtype=dy.dtype)
    np.add.at(drows, (slice(None), slice(None), slice(None), x_lo), dy * (1 - fx)[None, None, None, :])
    np.add.at(drows, (slice(None), slice(None), slice(None), x_hi), dy * fx[None, None, None, :])
    # undo the row lerp
    dx = np.zeros((n, c, in_h, in_w), dtype=dy.dtype)
    np.add.at(dx, (slice(None), slice(None), y_lo), drows * (1 - fy)[None, None, :, None])
    np.add.at(dx, (slice(None), slice(None), y_hi), drows * fy[None, None, :, None])
    return dx


def _conv_macs(x_shape, w_shape, stride, padding, dilation, groups):
    n = x_shape[0]
    c_out, cig, k, _ = w_shape
    oh = conv_out_size(x_shape[2], k, stride, padding, dilation)
    ow = conv_out_size(x_shape[3], k, stride, padding, dilation)
    return n * c_out * oh * ow * cig * k * k


def _common_dtype(*arrays):
    # the compiled lane is monomorphic per call; promote mixed-precision
    # operands the same way the numpy lane would
    dt = np.result_type(*[a.dtype for a in arrays if a is not None])
    return [None if a is None else np.asarray(a, dtype=dt) for a in arrays]


# The direct C loops beat im2col+BLAS only where the GEMM degenerates:
# depthwise convolutions (one input channel per filter). Dense and
# pointwise convolutions are BLAS-shaped, so even the compiled lane
# routes them through the numpy path.
def _use_compiled_conv(cig):
    return USE_COMPILED and cig == 1


def conv2d_forward(x, w, bias, stride, padding, dilation, groups):
    mac_recorder.add(_conv_macs(x.shape, w.shape, stride, padding, dilation, groups))
    if _use_compiled_conv(w.shape[1]):
        x, w, bias = _common_dtype(x, w, bias)
        return _compiled.conv2d_forward(x, w, bias, stride, padding, dilation, groups)
    return _np_conv2d_forward(x, w, bias, stride, padding, dilation, groups)


def conv2d_backward_input(dy, w, x_shape, stride, padding, dilation, groups):
    if _use_compiled_conv(w.shape[1]):
        dy, w = _common_dtype(dy, w)
        return _compiled.conv2d_backward_input(
            dy, w, x_shape[0], x_shape[2], x_shape[3], stride, padding, dilation, groups)
    return _np_conv2d_backward_input(dy, w, x_shape, stride, padding, dilation, groups)


def conv2d_backward_weight(x, dy, w_shape, stride, padding, dilation, groups):
    if _use_compiled_conv(w_shape[1]):
        x, dy = _common_dtype(x, dy)
        return _compiled.conv2d_backward_weight(
            x, dy, w_shape[0], w_shape[1], w_shape[2], stride, padding, dilation, groups)
    return _np_conv2d_backward_weight(x, dy, w_shape, stride, padding, dilation, groups)


def resize_bilinear_forward(x, out_h, out_w):
    if USE_COMPILED:
        return _compiled.resize_bilinear_forward(x, out_h, out_w)
    return _np_resize_bilinear_forward(x, out_h, out_w)


def resize_bilinear_backward(dy, in_h, in_w):
    if USE_COMPILED:
        return _compiled.resize_bilinear_backward(dy, in_h, in_w)
    return _np_resize_bilinear_backward(dy, in_h, in_w)


# the numpy lane stays importable for cross-lane tests and benchmarks
numpy_lane = {
    "conv2d_forward": _np_conv2d_forward,
    "conv2d_backward_input": _np_conv2d_backward_input,
    "conv2d_backward_weight": _np_conv2d_backward_weight,
    "resize_bilinear_forward": _np_resize_bilinear_forward,
    "resize_bilinear_backward": _np_resize_bilinear_backward,
}
