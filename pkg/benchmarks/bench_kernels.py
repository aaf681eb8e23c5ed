"""Benchmark the quantizer kernels: compiled extension vs numpy fallback.

Shapes mirror the full-scale training loop (batch 1024, N up to 100), where
these kernels run once per optimizer step on batch x N phase arrays.

Usage: python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import math
import time

import numpy as np

from risbeam import _quant_np

try:
    from risbeam import _quant_cy
except ImportError:
    _quant_cy = None


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_case(b, batch, n, repeats, rng):
    nb = 2 ** b - 1
    a = math.pi / 2 ** b
    c = 30.0
    rho = np.sort(rng.uniform(0, 2 * math.pi, nb))
    x = rng.uniform(-1, 2 * math.pi + 1, batch * n)
    gout = rng.standard_normal(batch * n)
    levels = np.linspace(0, 2 * a * nb, nb + 1)

    ops = {
        "soft_forward": lambda impl: impl.soft_forward(x, a, c, rho),
        "soft_backward": lambda impl: impl.soft_backward(x, gout, a, c, rho),
        "penalty_forward": lambda impl: impl.penalty_forward(x, a, c, rho),
        "penalty_backward":
            lambda impl: impl.penalty_backward(x, gout, a, c, rho),
        "hard_forward": lambda impl: impl.hard_forward(x, rho, levels),
    }
    rows = []
    for name, op in ops.items():
        t_np = timeit(lambda: op(_quant_np), repeats)
        if _quant_cy is not None:
            t_cy = timeit(lambda: op(_quant_cy), repeats)
            rows.append((name, t_np, t_cy, t_np / t_cy))
        else:
            rows.append((name, t_np, float("nan"), float("nan")))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--batch", type=int, default=1024)
    parser.add_argument("--n", type=int, default=100)
    args = parser.parse_args()

    if _quant_cy is None:
        print("compiled extension not available; timing numpy only\n")
    rng = np.random.default_rng(0)
    print(f"batch={args.batch} N={args.n} "
          f"({args.batch * args.n} elements/call)\n")
    header = f"{'kernel':<18} {'bits':>4} {'numpy ms':>10} " \
             f"{'cython ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for b in (1, 2, 3):
        for name, t_np, t_cy, speedup in bench_case(
                b, args.batch, args.n, args.repeats, rng):
            print(f"{name:<18} {b:>4} {t_np * 1e3:>10.3f} "
                  f"{t_cy * 1e3:>10.3f} {speedup:>7.2f}x")
        print()


if __name__ == "__main__":
    main()
