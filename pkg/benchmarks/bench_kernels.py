#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-NumPy fallback.

Times every hot kernel on training-representative shapes and prints a
table with the speedup of the numba path. The first numba call includes
JIT compilation, so each kernel is warmed up before timing.

Usage:
    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from ctrkit.backend import numba_ops, numpy_ops
from ctrkit.postproc import StructuringElement

rng = np.random.default_rng(0)


def timeit(fn, args, repeat):
    fn(*args)  # warm up (JIT compile / allocate)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_cases():
    x = rng.standard_normal((8, 16, 64, 64))
    w = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    dy = rng.standard_normal((8, 16, 64, 64))
    yield "conv3x3 forward (8,16,64,64)", "conv3x3_forward", (x, w, b)
    yield "conv3x3 backward (8,16,64,64)", "conv3x3_backward", (x, w, dy)

    xp = rng.standard_normal((8, 16, 64, 64))
    yield "maxpool2 forward (8,16,64,64)", "maxpool2_forward", (xp,)
    _, idx = numpy_ops.maxpool2_forward(xp)
    dyp = rng.standard_normal((8, 16, 32, 32))
    yield "maxpool2 backward (8,16,32,32)", "maxpool2_backward", (dyp, idx, 64, 64)

    mask = (rng.random((512, 512)) < 0.5).astype(np.uint8)
    offsets = StructuringElement.SQUARE3.offsets()
    yield "binary erode (512x512)", "binary_erode", (mask, offsets)
    yield "binary dilate (512x512)", "binary_dilate", (mask, offsets)
    yield "label components (512x512)", "label_components", (mask,)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions per kernel")
    args = parser.parse_args()

    print(f"{'kernel':<34} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    print("-" * 66)
    for label, name, call_args in bench_cases():
        t_numpy = timeit(getattr(numpy_ops, name), call_args, args.repeat)
        t_numba = timeit(getattr(numba_ops, name), call_args, args.repeat)
        print(
            f"{label:<34} {t_numpy * 1e3:>8.2f}ms {t_numba * 1e3:>8.2f}ms "
            f"{t_numpy / t_numba:>7.1f}x"
        )


if __name__ == "__main__":
    main()
