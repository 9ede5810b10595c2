"""Rank-4 tensor values and reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array in (batch, channel, height, width)
layout (parameters and scalars use their natural shapes) and records a
tape of operations so that ``backward()`` on a scalar loss accumulates
gradients into every ``requires_grad`` leaf.

Default precision is float32; build tensors with ``dtype=np.float64``
for gradient-checking headroom. All ops preserve the input dtype.
"""
from __future__ import annotations

import numpy as np

from minet import backend


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def from_op(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._backward_fn is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor with no recorded forward trace")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.accumulate_grad(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward_fn is not None:
                t._backward_fn(t.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _require_same_shape(self.data, other.data, "add")
            out = Tensor.from_op(self.data + other.data, (self, other), None)

            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(g)
                if other.requires_grad:
                    other.accumulate_grad(g)
            out._backward_fn = bwd if out.requires_grad else None
            return out
        out = Tensor.from_op(self.data + other, (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g)
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor.from_op(-self.data, (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(-g)
        return out

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _require_same_shape(self.data, other.data, "mul")
            out = Tensor.from_op(self.data * other.data, (self, other), None)

            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(g * other.data)
                if other.requires_grad:
                    other.accumulate_grad(g * self.data)
            out._backward_fn = bwd if out.requires_grad else None
            return out
        out = Tensor.from_op(self.data * other, (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g * other)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            _require_same_shape(self.data, other.data, "div")
            out = Tensor.from_op(self.data / other.data, (self, other), None)

            def bwd(g):
                if self.requires_grad:
                    self.accumulate_grad(g / other.data)
                if other.requires_grad:
                    other.accumulate_grad(-g * self.data / (other.data * other.data))
            out._backward_fn = bwd if out.requires_grad else None
            return out
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        # other / self for scalar other
        out = Tensor.from_op(other / self.data, (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(-g * other / (self.data * self.data))
        return out

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self):
        backend.aux_counter.add("activation_elements", self.data.size)
        mask = self.data > 0
        out = Tensor.from_op(np.where(mask, self.data, 0), (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g * mask)
        return out

    def sigmoid(self):
        backend.aux_counter.add("activation_elements", self.data.size)
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor.from_op(y, (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g * y * (1.0 - y))
        return out

    def log(self):
        out = Tensor.from_op(np.log(self.data), (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g / self.data)
        return out

    def clamp(self, lo, hi):
        """Clip values; gradient passes through only inside [lo, hi]."""
        inside = (self.data >= lo) & (self.data <= hi)
        out = Tensor.from_op(np.clip(self.data, lo, hi), (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(g * inside)
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self):
        out = Tensor.from_op(np.array(self.data.sum(), dtype=self.dtype), (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(np.full_like(self.data, g))
        return out

    def mean(self):
        n = self.data.size
        out = Tensor.from_op(np.array(self.data.mean(), dtype=self.dtype), (self,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: self.accumulate_grad(np.full_like(self.data, g / n))
        return out

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad}{tag})"


# -- structural ops -----------------------------------------------------------

def _as4d(t, op):
    if t.data.ndim != 4:
        raise ShapeError(f"{op}: expected a rank-4 tensor, got shape {t.shape}")


def ewise_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors."""
    return a + b


def concat_channels(parts) -> Tensor:
    """Concatenate along the channel axis, in list order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels: empty input list")
    for p in parts:
        _as4d(p, "concat_channels")
    ref = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if (s[0], s[2], s[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: batch/spatial mismatch {ref} vs {s}")
    data = np.concatenate([p.data for p in parts], axis=1)
    out = Tensor.from_op(data, parts, None)
    if out.requires_grad:
        splits = [p.data.shape[1] for p in parts]

        def bwd(g):
            off = 0
            for p, c in zip(parts, splits):
                if p.requires_grad:
                    p.accumulate_grad(g[:, off:off + c])
                off += c
        out._backward_fn = bwd
    return out


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    """View channels [start, stop) as a new tensor (copying)."""
    _as4d(t, "slice_channels")
    if not (0 <= start < stop <= t.shape[1]):
        raise ShapeError(f"slice_channels: [{start}, {stop}) out of range for c={t.shape[1]}")
    out = Tensor.from_op(t.data[:, start:stop].copy(), (t,), None)
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(t.data)
            full[:, start:stop] = g
            t.accumulate_grad(full)
        out._backward_fn = bwd
    return out


def resize_bilinear(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel-center source coordinates."""
    _as4d(t, "resize_bilinear")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: target size {out_h}x{out_w} must be >= 1")
    in_h, in_w = t.shape[2], t.shape[3]
    backend.aux_counter.add("resize_output_elements", t.shape[0] * t.shape[1] * out_h * out_w)
    if (out_h, out_w) == (in_h, in_w):
        y = t.data.copy()
    else:
        y = backend.resize_bilinear_forward(t.data, out_h, out_w)
    out = Tensor.from_op(y, (t,), None)
    if out.requires_grad:
        if (out_h, out_w) == (in_h, in_w):
            out._backward_fn = lambda g: t.accumulate_grad(g)
        else:
            out._backward_fn = lambda g: t.accumulate_grad(
                backend.resize_bilinear_backward(g, in_h, in_w))
    return out


def zeros(n, c, h, w, dtype=np.float32):
    return Tensor(np.zeros((n, c, h, w), dtype=dtype))


def ones(n, c, h, w, dtype=np.float32):
    return Tensor(np.ones((n, c, h, w), dtype=dtype))
