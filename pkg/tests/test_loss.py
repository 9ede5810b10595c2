"""BCE / SSIM / hybrid loss properties."""
import math

import numpy as np
import pytest

from minet.loss import bce_loss, hybrid_loss, ssim_loss, ssim_window
from minet.tensor import ShapeError, Tensor

RNG = np.random.default_rng(13)


def t64(arr, grad=False):
    t = Tensor(np.asarray(arr, dtype=np.float64))
    t.requires_grad = grad
    return t


def test_bce_at_half_is_ln2():
    s = t64(np.full((1, 1, 4, 4), 0.5))
    g = (RNG.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
    assert bce_loss(s, g).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_matches_literal_formula():
    s = t64(RNG.uniform(0.05, 0.95, (1, 1, 5, 5)))
    g = (RNG.random((1, 1, 5, 5)) > 0.5).astype(np.float64)
    want = -(g * np.log(s.data) + (1 - g) * np.log(1 - s.data)).mean()
    assert bce_loss(s, g).item() == pytest.approx(want, abs=1e-12)


def test_bce_clamps_extremes_finite():
    s = t64(np.zeros((1, 1, 2, 2)), grad=True)
    g = np.ones((1, 1, 2, 2))
    loss = bce_loss(s, g)
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(-math.log(1e-7), rel=1e-9)
    loss.backward()
    assert np.isfinite(s.grad).all()


def test_ssim_window_is_normalized_gaussian():
    w = ssim_window(np.float64)
    assert w.shape == (1, 1, 11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[0, 0, 5, 5] == w.max()
    np.testing.assert_allclose(w[0, 0], w[0, 0].T, atol=1e-15)  # symmetric


def test_ssim_zero_on_identical_maps():
    s = RNG.uniform(0, 1, (1, 1, 16, 16))
    assert abs(ssim_loss(t64(s), s).item()) < 1e-6


def test_ssim_positive_and_bounded_on_disjoint_maps():
    a = np.zeros((1, 1, 12, 12))
    b = np.ones((1, 1, 12, 12))
    v = ssim_loss(t64(a), b).item()
    assert 0.0 < v <= 2.0


def test_ssim_requires_min_size_and_single_channel():
    with pytest.raises(ShapeError):
        ssim_loss(t64(np.zeros((1, 1, 8, 8))), np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        ssim_loss(t64(np.zeros((1, 2, 16, 16))), np.zeros((1, 2, 16, 16)))


def test_ssim_gradient_flows():
    s = t64(RNG.uniform(0.2, 0.8, (1, 1, 12, 12)), grad=True)
    g = (RNG.random((1, 1, 12, 12)) > 0.5).astype(np.float64)
    ssim_loss(s, g).backward()
    assert s.grad is not None
    assert np.abs(s.grad).max() > 0


def test_hybrid_total_is_sum_of_ten_terms():
    heads = [t64(RNG.uniform(0.1, 0.9, (1, 1, 12, 12))) for _ in range(5)]
    g = (RNG.random((1, 1, 12, 12)) > 0.5).astype(np.float64)
    rep = hybrid_loss(heads, g)
    assert len(rep.per_head) == 5
    terms = [v.item() for pair in rep.per_head for v in pair]
    assert len(terms) == 10
    assert rep.total.item() == pytest.approx(sum(terms), rel=1e-12)


def test_hybrid_requires_five_heads():
    g = np.zeros((1, 1, 12, 12))
    with pytest.raises(ShapeError):
        hybrid_loss([t64(np.full((1, 1, 12, 12), 0.5))] * 4, g)


def test_loss_report_as_floats():
    heads = [t64(np.full((1, 1, 12, 12), 0.5)) for _ in range(5)]
    g = np.ones((1, 1, 12, 12))
    d = hybrid_loss(heads, g).as_floats()
    assert set(d) == {"total", "per_head"}
    assert all(len(pair) == 2 for pair in d["per_head"])
