#!/usr/bin/env python3
"""Compare the compiled kernel core against the pure-numpy fallback.

Times each kernel on shapes representative of the pipeline (metric-CNN
training batches, full-feature transform passes) plus an end-to-end conv
forward/backward, and checks agreement while at it.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from netbend import _kernels
from netbend.ops import Conv2d, init_conv


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(name, make_fn, repeats):
    rows = []
    outs = {}
    for backend, mod in sorted(_kernels.backends().items()):
        seconds, out = timeit(make_fn(mod), repeats)
        rows.append((backend, seconds))
        outs[backend] = out
    if len(outs) == 2:
        a, b = outs.values()
        agree = np.allclose(a, b, rtol=1e-5, atol=1e-6)
    else:
        agree = True
    base = dict(rows).get("python", rows[0][1])
    for backend, seconds in rows:
        speedup = base / seconds if seconds else float("inf")
        print(f"{name:34s} {backend:9s} {seconds * 1e3:9.2f} ms  x{speedup:5.2f}"
              f"{'' if agree else '  MISMATCH'}")
    if not agree:
        raise SystemExit(f"{name}: backends disagree")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {_kernels.BACKEND}; available: {sorted(_kernels.backends())}\n")
    print(f"{'kernel':34s} {'backend':9s} {'best':>11s}  vs python")

    x = np.ascontiguousarray(rng.standard_normal((50, 50, 32, 32)).astype(np.float32))
    bench("im2col 50x50x32x32 k3 s2 p1", lambda mod: lambda: mod.im2col(x, 3, 3, 2, 1), args.repeats)

    col = np.ascontiguousarray(rng.standard_normal((50, 450, 256)).astype(np.float32))
    bench("col2im 50x450x256 k3 s2 p1",
          lambda mod: lambda: mod.col2im(col, 50, 32, 32, 3, 3, 2, 1), args.repeats)

    m = np.ascontiguousarray(rng.standard_normal((256, 256)).astype(np.float32))
    for r in (2, 5):
        bench(f"dilate 256x256 disc r={r}", lambda mod, r=r: lambda: mod.dilate(m, r), args.repeats)
    bench("erode 256x256 disc r=2", lambda mod: lambda: mod.erode(m, 2), args.repeats)

    theta = np.radians(45.0)
    mat = np.array([[np.cos(theta), -np.sin(theta), 12.0],
                    [np.sin(theta), np.cos(theta), -5.0],
                    [0.0, 0.0, 1.0]])
    inv = np.ascontiguousarray(np.linalg.inv(mat)[:2].reshape(6))
    bench("warp_bilinear 256x256 rot45",
          lambda mod: lambda: mod.warp_bilinear(m, inv), args.repeats)

    # end-to-end conv fwd+bwd through whichever backend is selected
    print()
    w, b = init_conv(rng, 50, 50, 3, 3)
    conv = Conv2d(w, b, stride=2, padding=1)
    xb = rng.standard_normal((50, 50, 32, 32)).astype(np.float32)

    def fwd_bwd():
        y = conv.forward(xb)
        conv.backward(np.ones_like(y))
        return y

    seconds, _ = timeit(fwd_bwd, args.repeats)
    print(f"conv2d fwd+bwd batch50 50ch 32px ({_kernels.BACKEND}): {seconds * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
