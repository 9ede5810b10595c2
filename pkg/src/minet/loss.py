"""BCE loss, window-SSIM loss, and the five-head deep-supervision hybrid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from minet.nn import ConvSpec, conv2d
from minet.tensor import ShapeError, Tensor

CLAMP = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_tensor(g, like: Tensor) -> Tensor:
    if isinstance(g, Tensor):
        return g if g.dtype == like.dtype else Tensor(g.data.astype(like.dtype))
    return Tensor(np.asarray(g, dtype=like.dtype))


def bce_loss(s: Tensor, g) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to
    [1e-7, 1-1e-7] before the logs."""
    g = _as_tensor(g, s)
    if s.shape != g.shape:
        raise ShapeError(f"bce_loss: shape mismatch {s.shape} vs {g.shape}")
    sc = s.clamp(CLAMP, 1.0 - CLAMP)
    return -(g * sc.log() + (1.0 - g) * (1.0 - sc).log()).mean()


_window_cache = {}


def ssim_window(dtype):
    """Normalized 11x11 Gaussian window, sigma 1.5."""
    key = np.dtype(dtype).name
    if key not in _window_cache:
        half = SSIM_WINDOW // 2
        ax = np.arange(-half, half + 1, dtype=np.float64)
        g1 = np.exp(-(ax ** 2) / (2 * SSIM_SIGMA ** 2))
        w = np.outer(g1, g1)
        w /= w.sum()
        _window_cache[key] = w.astype(dtype).reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW)
    return _window_cache[key]


def ssim_loss(s: Tensor, g) -> Tensor:
    """1 - mean SSIM over valid (unpadded) 11x11 Gaussian windows,
    dynamic range 1."""
    g = _as_tensor(g, s)
    if s.shape != g.shape:
        raise ShapeError(f"ssim_loss: shape mismatch {s.shape} vs {g.shape}")
    if s.shape[1] != 1:
        raise ShapeError(f"ssim_loss: single-channel maps required, got c={s.shape[1]}")
    if s.shape[2] < SSIM_WINDOW or s.shape[3] < SSIM_WINDOW:
        raise ShapeError(f"ssim_loss: spatial dims {s.shape[2]}x{s.shape[3]} smaller "
                         f"than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    spec = ConvSpec(1, 1, SSIM_WINDOW)
    w = Tensor(ssim_window(s.dtype))

    def blur(t):
        return conv2d(t, w, None, spec)

    mu_s = blur(s)
    mu_g = blur(g)
    var_s = blur(s * s) - mu_s * mu_s
    var_g = blur(g * g) - mu_g * mu_g
    cov = blur(s * g) - mu_s * mu_g
    num = (2.0 * mu_s * mu_g + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_s * mu_s + mu_g * mu_g + SSIM_C1) * (var_s + var_g + SSIM_C2)
    return 1.0 - (num / den).mean()


@dataclass
class LossReport:
    total: Tensor
    per_head: list  # five (bce, ssim) Tensor pairs

    def as_floats(self):
        return {
            "total": self.total.item(),
            "per_head": [(b.item(), s.item()) for b, s in self.per_head],
        }


def hybrid_loss(heads, g) -> LossReport:
    """Sum of BCE + SSIM over the five supervision heads."""
    heads = list(heads)
    if len(heads) != 5:
        raise ShapeError(f"hybrid_loss: expected 5 heads, got {len(heads)}")
    per_head = []
    total = None
    for s in heads:
        b = bce_loss(s, g)
        m = ssim_loss(s, g)
        per_head.append((b, m))
        term = b + m
        total = term if total is None else total + term
    return LossReport(total, per_head)
