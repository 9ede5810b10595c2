"""Finite-difference verification suite covering every differentiable op
family and the end-to-end multi-scale module, in 64-bit precision."""
from __future__ import annotations

import numpy as np

from minet import tensor as T
from minet import loss as L
from minet.model import MIModule, MIVariant
from minet.nn import ConvSpec, ParamStore, batchnorm, conv2d
from minet.optim import FiniteDiffReport, finite_diff_check
from minet.tensor import Tensor

F64 = np.float64


def _rand(rng, *shape):
    return rng.standard_normal(shape).astype(F64)


def _param(rng, *shape):
    t = Tensor(_rand(rng, *shape))
    t.requires_grad = True
    return t


def _store(**named):
    st = ParamStore()
    for k, v in named.items():
        st.register(k, v)
    return st


def _target(rng, x):
    """A fixed random projection making the loss sensitive everywhere."""
    w = _rand(rng, *x.shape)
    return lambda y: (y * Tensor(w)).sum()


def gradcheck_cases(seed=0):
    """Yield (family-name, loss-closure, param-store) triples."""
    rng = np.random.default_rng(seed)

    # dense conv
    x = _param(rng, 1, 3, 8, 8)
    w = _param(rng, 4, 3, 3, 3)
    proj = _target(rng, np.zeros((1, 4, 8, 8)))
    spec = ConvSpec(3, 4, 3, padding=1)
    yield "conv-dense", (lambda x=x, w=w, spec=spec, proj=proj: proj(conv2d(x, w, None, spec))), _store(x=x, w=w)

    # depthwise dilated conv
    x = _param(rng, 1, 4, 8, 8)
    w = _param(rng, 4, 1, 3, 3)
    spec = ConvSpec(4, 4, 3, dilation=2, padding=2, groups=4)
    proj = _target(rng, np.zeros((1, 4, 8, 8)))
    yield "conv-depthwise-dilated", (lambda x=x, w=w, spec=spec, proj=proj: proj(conv2d(x, w, None, spec))), _store(x=x, w=w)

    # grouped pointwise with stride-2 spatial entry and bias
    x = _param(rng, 2, 8, 6, 6)
    w = _param(rng, 4, 4, 1, 1)
    b = _param(rng, 4)
    spec = ConvSpec(8, 4, 1, groups=2, bias=True)
    proj = _target(rng, np.zeros((2, 4, 6, 6)))
    yield "conv-grouped-bias", (lambda x=x, w=w, b=b, spec=spec, proj=proj: proj(conv2d(x, w, b, spec))), _store(x=x, w=w, b=b)

    x = _param(rng, 1, 2, 9, 9)
    w = _param(rng, 3, 2, 3, 3)
    spec = ConvSpec(2, 3, 3, stride=2, padding=1)
    proj = _target(rng, np.zeros((1, 3, 5, 5)))
    yield "conv-strided", (lambda x=x, w=w, spec=spec, proj=proj: proj(conv2d(x, w, None, spec))), _store(x=x, w=w)

    # batchnorm, both modes
    for mode in ("infer", "train"):
        x = _param(rng, 2, 3, 4, 4)
        gamma = _param(rng, 3)
        beta = _param(rng, 3)
        rm = _rand(rng, 3)
        rv = np.abs(_rand(rng, 3)) + 0.5
        proj = _target(rng, np.zeros((2, 3, 4, 4)))

        def bn_loss(x=x, gamma=gamma, beta=beta, rm=rm, rv=rv, proj=proj, mode=mode):
            return proj(batchnorm(x, gamma, beta, rm.copy(), rv.copy(), mode == "train"))
        yield f"batchnorm-{mode}", bn_loss, _store(x=x, gamma=gamma, beta=beta)

    # activations (relu probed away from the kink)
    x = _param(rng, 1, 2, 5, 5)
    x.data[np.abs(x.data) < 1e-3] += 0.01
    proj = _target(rng, np.zeros((1, 2, 5, 5)))
    yield "relu", (lambda x=x, proj=proj: proj(x.relu())), _store(x=x)

    x = _param(rng, 1, 2, 5, 5)
    proj = _target(rng, np.zeros((1, 2, 5, 5)))
    yield "sigmoid", (lambda x=x, proj=proj: proj(x.sigmoid())), _store(x=x)

    # structural ops
    a = _param(rng, 1, 3, 4, 4)
    b2 = _param(rng, 1, 3, 4, 4)
    proj = _target(rng, np.zeros((1, 3, 4, 4)))
    yield "ewise-add", (lambda a=a, b2=b2, proj=proj: proj(a + b2)), _store(a=a, b=b2)

    a = _param(rng, 1, 2, 4, 4)
    b2 = _param(rng, 1, 3, 4, 4)
    proj = _target(rng, np.zeros((1, 5, 4, 4)))
    yield "concat-channels", (lambda a=a, b2=b2, proj=proj: proj(T.concat_channels([a, b2]))), _store(a=a, b=b2)

    x = _param(rng, 1, 2, 6, 6)
    proj = _target(rng, np.zeros((1, 2, 9, 9)))
    yield "resize-bilinear-up", (lambda x=x, proj=proj: proj(T.resize_bilinear(x, 9, 9))), _store(x=x)

    x = _param(rng, 1, 2, 8, 8)
    proj = _target(rng, np.zeros((1, 2, 3, 3)))
    yield "resize-bilinear-down", (lambda x=x, proj=proj: proj(T.resize_bilinear(x, 3, 3))), _store(x=x)

    # losses
    s = Tensor(rng.uniform(0.05, 0.95, (1, 1, 12, 12)).astype(F64))
    s.requires_grad = True
    g = (rng.random((1, 1, 12, 12)) > 0.5).astype(F64)
    yield "bce", (lambda s=s, g=g: L.bce_loss(s, g)), _store(s=s)

    s2 = Tensor(rng.uniform(0.05, 0.95, (1, 1, 14, 14)).astype(F64))
    s2.requires_grad = True
    g2 = (rng.random((1, 1, 14, 14)) > 0.5).astype(F64)
    yield "ssim", (lambda s2=s2, g2=g2: L.ssim_loss(s2, g2)), _store(s=s2)

    # end-to-end MI module
    mi = MIModule(8, MIVariant.STANDARD, np.random.default_rng(seed + 7), dtype=F64)
    xin = _param(rng, 1, 8, 6, 6)
    st = ParamStore()
    st.register("x", xin)
    for name, p in mi.named_params():
        st.register(name, p)
    proj = _target(rng, np.zeros((1, 8, 6, 6)))
    yield "mi-module", (lambda mi=mi, xin=xin, proj=proj: proj(mi(xin))), st


# ssim's gradient entries are ~1e-4, so at eps=1e-6 the central difference
# is roundoff-dominated (error scales as 1/eps); a larger step fixes that.
_EPS_OVERRIDE = {"ssim": 1e-4}


def gradcheck_suite(tol=1e-5, eps=1e-6, seed=0):
    """Run every case; returns [(family, FiniteDiffReport)]."""
    results = []
    for family, f, store in gradcheck_cases(seed):
        report = finite_diff_check(f, store, eps=_EPS_OVERRIDE.get(family, eps),
                                   tol=tol, rng=np.random.default_rng(seed + 1))
        results.append((family, report))
    return results
