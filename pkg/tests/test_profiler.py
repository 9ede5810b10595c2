"""Cost model: closed-form formulas, instrumented cross-checks, bench."""
import numpy as np
import pytest

from minet.model import MINet, MINetConfig
from minet.profiler import (cost_dsconv, cost_mi, cost_mi_dsconv_variant,
                            count_macs, count_params, latency_bench)

SMALL = MINetConfig(input_resolution=64, train_resolution=64)


def test_cost_formulas_literal():
    k, c, w, h = 3, 4, 10, 10
    assert cost_dsconv(k, c, w, h) == (k * k * c + c * c) * w * h
    assert cost_mi(k, c, w, h) == (4 * k * k * c + 4 * c + c * c) * w * h
    assert cost_mi_dsconv_variant(k, c, w, h) == 4 * (k * k * c + c * c) * w * h


def test_mi_cheaper_than_four_dsconvs_for_c_above_one():
    for c in range(2, 129):
        for res in (46, 92, 184):
            assert cost_mi(3, c, res, res) < cost_mi_dsconv_variant(3, c, res, res)
    # at c=1 the inequality flips: 41wh vs 40wh
    assert cost_mi(3, 1, 46, 46) > cost_mi_dsconv_variant(3, 1, 46, 46)


def test_count_params_equals_enumeration():
    net = MINet(SMALL, seed=0)
    rep = count_params(net)  # raises internally on any mismatch
    assert rep.total_params == sum(p.data.size for _, p in net.named_params())
    assert rep.total_params_with_buffers - rep.total_params == \
        sum(b.size for _, b in net.named_buffers())
    assert rep.total_params == sum(
        r.params for r in rep.rows if r.kind != "bn-buffers")


def test_count_params_is_resolution_independent():
    assert count_params(MINet(SMALL, seed=0)).total_params == \
        count_params(MINet(MINetConfig(), seed=1)).total_params


def test_count_macs_cross_check_and_scaling():
    net = MINet(SMALL, seed=0)
    m64 = count_macs(net, 64)   # instrumented == analytic enforced inside
    m128 = count_macs(net, 128)
    # conv MACs scale with spatial area
    assert m128.total_macs == pytest.approx(4 * m64.total_macs, rel=0.01)
    assert m64.total_macs == sum(r.macs for r in m64.rows)
    assert m64.to_dict()["total_flops_2x_mac"] == 2 * m64.total_macs


def test_count_macs_reports_aux_itemized():
    rep = count_macs(MINet(SMALL, seed=0), 64)
    assert set(rep.aux) == {"batchnorm_elements", "activation_elements",
                            "resize_output_elements"}
    assert all(v > 0 for v in rep.aux.values())


def test_head_convs_are_the_only_biased_layers():
    net = MINet(SMALL, seed=0)
    biased = [name for name, p in net.named_params() if name.endswith(".bias")]
    assert biased == [f"head{i}.conv.bias" for i in range(1, 6)]


def test_latency_bench_reports():
    rep = latency_bench(MINet(SMALL, seed=0), 64, repeats=10, warmup=1)
    assert len(rep.samples_ms) == 10
    assert rep.mean_ms > 0
    assert rep.p50_ms <= rep.p95_ms or rep.p50_ms == pytest.approx(rep.p95_ms)
    d = rep.to_dict()
    assert d["fps"] == pytest.approx(1000.0 / rep.mean_ms)
    assert d["backend"] in ("compiled", "python")


def test_latency_bench_rejects_too_few_repeats():
    with pytest.raises(ValueError):
        latency_bench(MINet(SMALL, seed=0), 64, repeats=3)
