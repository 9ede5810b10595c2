"""Convolution, normalization, activation and dropout, with gradients.

The layer classes here are thin parameter holders; the numeric work is
done by the functional ops (conv2d, batchnorm, dropout) which record
backward closures on the autodiff tape. Convolution is cross-correlation
with zero padding; one kernel serves dense, depthwise, pointwise and
grouped cases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from minet import backend
from minet.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer."""
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ShapeError(
                f"conv channels ({self.c_in}->{self.c_out}) not divisible by groups={self.groups}")
        if min(self.c_in, self.c_out, self.kernel, self.stride, self.dilation, self.groups) < 1:
            raise ShapeError("conv spec fields must be >= 1")
        if self.padding < 0:
            raise ShapeError("conv padding must be >= 0")

    def out_size(self, h, w):
        oh = backend.conv_out_size(h, self.kernel, self.stride, self.padding, self.dilation)
        ow = backend.conv_out_size(w, self.kernel, self.stride, self.padding, self.dilation)
        return oh, ow

    @property
    def weight_shape(self):
        return (self.c_out, self.c_in // self.groups, self.kernel, self.kernel)

    @property
    def param_count(self):
        n = self.c_out * (self.c_in // self.groups) * self.kernel ** 2
        return n + (self.c_out if self.bias else 0)


@dataclass
class ConvWeights:
    """Learned parameters of one convolution: (c_out, c_in/groups, k, k) + optional bias."""
    kernels: np.ndarray
    bias: Optional[np.ndarray] = None


@dataclass
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4, got {x.shape}")
    if x.shape[1] != spec.c_in:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, spec expects {spec.c_in}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d: weight shape {weight.shape} != spec {spec.weight_shape}")
    oh, ow = spec.out_size(x.shape[2], x.shape[3])
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: degenerate output {oh}x{ow} from input {x.shape[2]}x{x.shape[3]} "
            f"with k={spec.kernel} s={spec.stride} d={spec.dilation} p={spec.padding}")

    y = backend.conv2d_forward(
        x.data, weight.data, None if bias is None else bias.data,
        spec.stride, spec.padding, spec.dilation, spec.groups)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor.from_op(y, parents, None)
    if out.requires_grad:
        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(backend.conv2d_backward_input(
                    g, weight.data, x.shape, spec.stride, spec.padding, spec.dilation, spec.groups))
            if weight.requires_grad:
                weight.accumulate_grad(backend.conv2d_backward_weight(
                    x.data, g, weight.shape, spec.stride, spec.padding, spec.dilation, spec.groups))
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        out._backward_fn = bwd
    return out


def conv2d_weights(x: Tensor, spec: ConvSpec, wts: ConvWeights) -> Tensor:
    """Functional convenience over raw ConvWeights buffers (no gradient)."""
    w = Tensor(np.asarray(wts.kernels, dtype=x.dtype))
    b = None if wts.bias is None else Tensor(np.asarray(wts.bias, dtype=x.dtype))
    return conv2d(x, w, b, spec)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
              train: bool, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel normalization. Train mode uses batch statistics and
    updates the running buffers in place (treated as non-differentiable)."""
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm: input must be rank 4, got {x.shape}")
    c = x.shape[1]
    if gamma.data.shape != (c,):
        raise ShapeError(f"batchnorm: {c}-channel input vs {gamma.data.shape[0]}-channel params")

    backend.aux_counter.add("batchnorm_elements", x.data.size)
    if train:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * ivstd[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor.from_op(y, (x, gamma, beta), None)
    if out.requires_grad:
        def bwd(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gi = g * gamma.data[None, :, None, None]
                if train:
                    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
                    sum_gi = gi.sum(axis=(0, 2, 3), keepdims=True)
                    sum_gi_xhat = (gi * xhat).sum(axis=(0, 2, 3), keepdims=True)
                    dx = (gi - sum_gi / m - xhat * sum_gi_xhat / m) * ivstd[None, :, None, None]
                else:
                    dx = gi * ivstd[None, :, None, None]
                x.accumulate_grad(dx)
        out._backward_fn = bwd
    return out


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors by
    1/(1-rate). Identity in inference mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        out = Tensor.from_op(x.data.copy(), (x,), None)
        if out.requires_grad:
            out._backward_fn = lambda g: x.accumulate_grad(g)
        return out
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)
    out = Tensor.from_op(x.data * keep * scale, (x,), None)
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g * keep * scale)
    return out


def xavier_init(spec: ConvSpec, rng: np.random.Generator, dtype=np.float32) -> ConvWeights:
    """Uniform Xavier/Glorot initialization; zero bias."""
    fan_in = (spec.c_in // spec.groups) * spec.kernel ** 2
    fan_out = (spec.c_out // spec.groups) * spec.kernel ** 2
    a = np.sqrt(6.0 / (fan_in + fan_out))
    kernels = rng.uniform(-a, a, size=spec.weight_shape).astype(dtype)
    bias = np.zeros(spec.c_out, dtype=dtype) if spec.bias else None
    return ConvWeights(kernels, bias)


class ParamStore:
    """Ordered name -> parameter map with deterministic iteration."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, t: Tensor):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t.name = name
        self._params[name] = t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def total_size(self):
        return sum(t.data.size for t in self._params.values())


class Module:
    """Minimal layer container: explicit parameter/buffer/child registries."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def add_param(self, name, t: Tensor):
        t.requires_grad = True
        self._params[name] = t
        return t

    def add_buffer(self, name, arr):
        self._buffers[name] = arr
        return arr

    def add_child(self, name, mod):
        self._children[name] = mod
        return mod

    def named_params(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_params(prefix + cname + ".")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for cname, child in self._children.items():
            yield from child.modules(prefix + cname + ".")


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self.full_name = "conv"        # overwritten by the profiler walk
        self.last_input_shape = None   # captured for cost accounting
        wts = xavier_init(spec, rng, dtype)
        self.weight = self.add_param("weight", Tensor(wts.kernels))
        self.bias = self.add_param("bias", Tensor(wts.bias)) if spec.bias else None

    def __call__(self, x, train=False):
        self.last_input_shape = x.shape
        backend.mac_recorder.set_label(self.full_name)
        return conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, c, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.c = c
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", Tensor(np.ones(c, dtype=dtype)))
        self.beta = self.add_param("beta", Tensor(np.zeros(c, dtype=dtype)))
        self.running_mean = self.add_buffer("running_mean", np.zeros(c, dtype=np.float64))
        self.running_var = self.add_buffer("running_var", np.ones(c, dtype=np.float64))

    def __call__(self, x, train=False):
        return batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                         train, self.momentum, self.eps)


class ConvBNReLU(Module):
    """conv -> BN -> ReLU, the stage-1 entry and a DSConv half."""

    def __init__(self, spec: ConvSpec, rng, dtype=np.float32, relu=True):
        super().__init__()
        self.relu = relu
        self.conv = self.add_child("conv", Conv2d(spec, rng, dtype))
        self.bn = self.add_child("bn", BatchNorm2d(spec.c_out, dtype))

    def __call__(self, x, train=False):
        y = self.bn(self.conv(x), train)
        return y.relu() if self.relu else y


class DSConv(Module):
    """Depthwise separable conv: 3x3 depthwise then 1x1 pointwise, each
    followed by BN + ReLU. Stride/dilation live on the depthwise part."""

    def __init__(self, c_in, c_out, rng, stride=1, dilation=1, dtype=np.float32):
        super().__init__()
        dw_spec = ConvSpec(c_in, c_in, 3, stride=stride, dilation=dilation,
                           padding=dilation if stride == 1 else 1, groups=c_in)
        pw_spec = ConvSpec(c_in, c_out, 1)
        self.dw = self.add_child("dw", ConvBNReLU(dw_spec, rng, dtype))
        self.pw = self.add_child("pw", ConvBNReLU(pw_spec, rng, dtype))

    def __call__(self, x, train=False):
        return self.pw(self.dw(x, train), train)
