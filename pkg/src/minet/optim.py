"""Adam optimizer and the finite-difference gradient checking harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from minet.nn import ParamStore


@dataclass
class AdamState:
    lr: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState):
    """One bias-corrected Adam update. Gradients are left untouched;
    the caller zeroes them between steps."""
    state.step += 1
    t = state.step
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise ValueError(f"adam moment shape {m.shape} drifted from parameter "
                             f"{name!r} shape {p.data.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g.astype(np.float64) ** 2)
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)


@dataclass
class FiniteDiffEntry:
    name: str
    checked: int
    max_rel: float
    mean_rel: float


@dataclass
class FiniteDiffReport:
    entries: list
    tol: float

    @property
    def max_rel(self):
        return max((e.max_rel for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.max_rel < self.tol


def finite_diff_check(f, store: ParamStore, eps=1e-6, tol=1e-5, rng=None,
                      max_coords=256) -> FiniteDiffReport:
    """Compare analytic gradients of the scalar-valued f() against central
    differences, on a seeded subsample of at most `max_coords` coordinates
    per parameter tensor."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)

    store.zero_grads()
    loss = f()
    base = loss.item()
    if not np.isfinite(base):
        raise ValueError(f"finite_diff_check: non-finite loss {base}")
    loss.backward()

    entries = []
    for name, p in store.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        rels = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"finite_diff_check: non-finite probe at {name}[{i}]")
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            rels.append(abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
        rels = np.array(rels) if rels else np.zeros(1)
        entries.append(FiniteDiffEntry(name, len(rels), float(rels.max()), float(rels.mean())))
    return FiniteDiffReport(entries, tol)
