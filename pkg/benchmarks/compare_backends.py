#!/usr/bin/env python3
"""Compare the compiled kernel lane against the numpy fallback.

Two levels:
* kernel micro-benchmarks (convolution shapes taken from the network,
  both lanes called in-process);
* whole-network single-image latency, one subprocess per lane since the
  lane is fixed at import time.

Usage: python benchmarks/compare_backends.py [--resolution 368] [--repeats 10]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from minet import backend

KERNEL_CASES = [
    # label, x shape, w shape, stride, padding, dilation, groups
    ("stage1 3x3 s2", (1, 1, 368, 368), (16, 1, 3, 3), 2, 1, 1, 1),
    ("depthwise 3x3 d2", (1, 64, 46, 46), (64, 1, 3, 3), 1, 2, 2, 64),
    ("pointwise 1x1", (1, 64, 46, 46), (64, 64, 1, 1), 1, 0, 1, 1),
    ("grouped fuse 1x1", (1, 128, 46, 46), (32, 4, 1, 1), 1, 0, 1, 32),
]


def time_fn(fn, repeats):
    fn()  # warm
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def kernel_bench(repeats):
    try:
        from minet import _kernels
    except ImportError:
        print("compiled lane not built; kernel comparison skipped")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for label, xs, ws, st, pa, di, gr in KERNEL_CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        t_np = time_fn(lambda: backend.numpy_lane["conv2d_forward"](x, w, None, st, pa, di, gr), repeats)
        t_cy = time_fn(lambda: _kernels.conv2d_forward(x, w, None, st, pa, di, gr), repeats)
        print(f"{label:24s} {t_np:10.2f} {t_cy:12.2f} {t_np / t_cy:7.2f}x")


def network_bench(resolution, repeats):
    repeats = max(repeats, 10)  # latency_bench's statistical floor
    script = (
        "import json\n"
        "from minet.model import MINet, MINetConfig\n"
        "from minet.profiler import latency_bench\n"
        f"rep = latency_bench(MINet(MINetConfig(), seed=0), {resolution}, "
        f"repeats={repeats}, warmup=2)\n"
        "print(json.dumps(rep.to_dict()))\n"
    )
    print(f"\nfull network, 1x1x{resolution}x{resolution}, {repeats} repeats:")
    for lane in ("python", "compiled"):
        env = dict(os.environ, MINET_BACKEND=lane)
        r = subprocess.run([sys.executable, "-c", script], env=env,
                           capture_output=True, text=True)
        if r.returncode != 0:
            print(f"  {lane:9s} failed: {r.stderr.strip().splitlines()[-1]}")
            continue
        d = json.loads(r.stdout)
        print(f"  {lane:9s} mean {d['mean_ms']:8.1f} ms   p50 {d['p50_ms']:8.1f} ms"
              f"   {d['fps']:6.2f} fps")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=368)
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()
    kernel_bench(args.repeats)
    network_bench(args.resolution, args.repeats)


if __name__ == "__main__":
    main()
