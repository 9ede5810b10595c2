"""Cost accounting: closed-form parameter/MAC counts, the depthwise
separable and multi-scale module cost formulas, an instrumented counter
cross-check, and a CPU latency bench.

"FLOPs" here means multiply-accumulate count (1 MAC = 1 FLOP), the
convention under which the published budgets are consistent with the
per-layer formulas; reports also carry 2x MAC for the other convention.
Normalization, activation, and resize work is excluded from the headline
total and itemized separately.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from minet import backend
from minet.model import MINet
from minet.nn import BatchNorm2d, Conv2d
from minet.tensor import Tensor


def cost_dsconv(k, c, w, h):
    """MACs of one depthwise separable conv at constant width/resolution."""
    return k * k * c * w * h + c * c * w * h


def cost_mi(k, c, w, h):
    """MACs of one multi-scale interactive module: four k x k depthwise
    branches, the grouped 4-to-1 fusion, and the c x c channel mix."""
    return 4 * k * k * c * w * h + c * 4 * w * h + c * c * w * h


def cost_mi_dsconv_variant(k, c, w, h):
    """MACs of the four-full-DSConv alternative (concat/sum fusion)."""
    return 4 * (k * k * c * w * h + c * c * w * h)


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    macs: int


@dataclass
class CostReport:
    rows: list
    input_resolution: int | None
    variant: str
    total_params: int = 0          # learned (trainable) parameters
    total_params_with_buffers: int = 0
    total_macs: int = 0
    aux: dict = field(default_factory=dict)

    def finalize(self):
        self.total_params = sum(r.params for r in self.rows if r.kind != "bn-buffers")
        self.total_params_with_buffers = sum(r.params for r in self.rows)
        self.total_macs = sum(r.macs for r in self.rows)
        return self

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_resolution": self.input_resolution,
            "total_params": self.total_params,
            "total_params_with_buffers": self.total_params_with_buffers,
            "total_macs": self.total_macs,
            "total_flops_2x_mac": 2 * self.total_macs,
            "aux_excluded_from_total": self.aux,
            "rows": [[r.name, r.kind, r.params, r.macs] for r in self.rows],
        }


def _conv_modules(net: MINet):
    for name, mod in net.modules():
        if isinstance(mod, Conv2d):
            mod.full_name = name
            yield name, mod
        elif isinstance(mod, BatchNorm2d):
            yield name, mod


def count_params(net: MINet) -> CostReport:
    """Closed-form per-layer parameter counts. Cross-checked against
    brute-force weight-buffer enumeration; a mismatch raises."""
    rows = []
    for name, mod in _conv_modules(net):
        if isinstance(mod, Conv2d):
            rows.append(CostRow(name, "conv", mod.spec.param_count, 0))
        else:
            rows.append(CostRow(name, "bn", 2 * mod.c, 0))
            rows.append(CostRow(name, "bn-buffers", 2 * mod.c, 0))
    report = CostReport(rows, None, net.cfg.variant).finalize()

    enumerated = sum(p.data.size for _, p in net.named_params())
    enumerated_buffers = sum(b.size for _, b in net.named_buffers())
    if report.total_params != enumerated:
        raise AssertionError(f"analytic parameter count {report.total_params} != "
                             f"enumerated weight buffers {enumerated}")
    if report.total_params_with_buffers != enumerated + enumerated_buffers:
        raise AssertionError("analytic buffer count disagrees with enumeration")
    return report


def count_macs(net: MINet, input_resolution: int | None = None) -> CostReport:
    """Analytic per-conv MAC counts at the given input resolution,
    cross-checked exactly against the instrumented kernel counters from a
    real forward pass."""
    res = input_resolution or net.cfg.input_resolution
    x = Tensor(np.zeros((1, net.cfg.input_channels, res, res), dtype=net.dtype))
    convs = dict(_conv_modules(net))  # assigns full names
    backend.mac_recorder.start()
    backend.aux_counter.start()
    net.forward(x, train=False)
    backend.mac_recorder.stop()
    backend.aux_counter.stop()

    instrumented = {}
    for label, macs in backend.mac_recorder.records:
        instrumented[label] = instrumented.get(label, 0) + macs

    rows = []
    for name, mod in convs.items():
        if not isinstance(mod, Conv2d):
            continue
        s = mod.spec
        n, _, h, w = mod.last_input_shape
        oh, ow = s.out_size(h, w)
        analytic = n * s.c_out * oh * ow * (s.c_in // s.groups) * s.kernel ** 2
        counted = instrumented.pop(name, 0)
        if analytic != counted:
            raise AssertionError(f"layer {name}: analytic MACs {analytic} != "
                                 f"instrumented {counted}")
        rows.append(CostRow(name, "conv", s.param_count, analytic))
    if instrumented:
        raise AssertionError(f"instrumented MACs with no matching layer: {instrumented}")
    report = CostReport(rows, res, net.cfg.variant)
    report.aux = dict(backend.aux_counter.counts)
    return report.finalize()


@dataclass
class BenchReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    samples_ms: list
    input_resolution: int
    backend: str
    total_macs: int

    def to_dict(self):
        return {
            "mean_ms": self.mean_ms, "p50_ms": self.p50_ms, "p95_ms": self.p95_ms,
            "fps": 1000.0 / self.mean_ms if self.mean_ms else float("inf"),
            "samples_ms": self.samples_ms, "input_resolution": self.input_resolution,
            "backend": self.backend, "total_macs": self.total_macs,
        }


def latency_bench(net: MINet, input_resolution=None, repeats=30, warmup=3) -> BenchReport:
    """Single-image inference wall time; report only, no thresholds."""
    if repeats < 10:
        raise ValueError("latency_bench needs repeats >= 10")
    res = input_resolution or net.cfg.input_resolution
    x = Tensor(np.zeros((1, net.cfg.input_channels, res, res), dtype=net.dtype))
    for _ in range(warmup):
        net.forward(x, train=False)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        net.forward(x, train=False)
        samples.append((time.perf_counter() - t0) * 1000.0)
    arr = np.array(samples)
    return BenchReport(
        mean_ms=float(arr.mean()), p50_ms=float(np.percentile(arr, 50)),
        p95_ms=float(np.percentile(arr, 95)), samples_ms=samples,
        input_resolution=res, backend=backend.backend_name(),
        total_macs=count_macs(net, res).total_macs)
