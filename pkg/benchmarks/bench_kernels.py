"""Benchmark the numba kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeat 5]

Covers the hot paths: batch Hermite tensors, the deterministic pairwise
reduction, the tensor power-iteration inner loop, and an end-to-end
cross-moment. Numba functions are warmed up before timing so JIT compilation
is excluded.
"""

import argparse
import time

import numpy as np

from scoremoments._kernels import numba_impl, numpy_impl
from scoremoments.tensor_core import rank1_sum


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n, d = 100_000, 8
    z = rng.standard_normal((n, d))
    ones = np.ones(d)
    block = rng.standard_normal((4096, d**3))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    t3 = rank1_sum(1.0 + np.arange(4), q[:, :4].T, 3).data
    u0 = q[:, 0]

    cases = [
        ("hermite m=2 (100k x 8)", lambda k: k.hermite_flat(z, ones, 2)),
        ("hermite m=3 (100k x 8)", lambda k: k.hermite_flat(z, ones, 3)),
        ("fold_sum (4096 x 512)", lambda k: k.fold_sum(block)),
        ("power_iterate (d=8, 500 it)", lambda k: k.power_iterate(t3, u0, 500, 0.0)),
    ]

    # warm up numba (compilation happens here, not in the timed region)
    for _name, fn in cases:
        fn(numba_impl)

    print(f"{'kernel':<30} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, fn in cases:
        t_np = _time(lambda: fn(numpy_impl), args.repeat)
        t_nb = _time(lambda: fn(numba_impl), args.repeat)
        print(f"{name:<30} {t_np * 1e3:>10.2f}ms {t_nb * 1e3:>10.2f}ms {t_np / t_nb:>8.2f}x")

    # agreement spot check
    h_np = numpy_impl.hermite_flat(z[:100], ones, 3)
    h_nb = numba_impl.hermite_flat(z[:100], ones, 3)
    print("\nbackends agree on hermite m=3:", np.array_equal(h_np, h_nb))
    f_np = numpy_impl.fold_sum(block)
    f_nb = numba_impl.fold_sum(block)
    print("backends agree on fold_sum:   ", np.array_equal(f_np, f_nb))


if __name__ == "__main__":
    main()
