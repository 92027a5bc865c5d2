"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from synccert import _kernels_py

try:
    from synccert import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    a8 = rng.standard_normal((8, 8))
    a24 = rng.standard_normal((24, 24))
    loop = rng.standard_normal((12, 12)) * 0.2 - np.eye(12)
    x0 = rng.standard_normal(12)
    return [
        ("real_schur 8x8", lambda m: m.real_schur(a8), 200),
        ("real_schur 24x24", lambda m: m.real_schur(a24), 20),
        ("rk4_linear 12 states x 20000 steps", lambda m: m.rk4_linear(loop, x0, 1e-3, 20000), 1),
        ("iterate_linear 12 states x 20000 steps", lambda m: m.iterate_linear(loop * 0.1, x0, 20000), 1),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'python (ms)':>12s} {'compiled (ms)':>14s} {'speedup':>8s}")
    for name, fn, number in cases(rng):
        tp = min(timeit.repeat(lambda: fn(_kernels_py), number=number, repeat=args.repeat)) / number
        if _kernels is None:
            print(f"{name:42s} {tp * 1e3:12.3f} {'-':>14s} {'-':>8s}")
            continue
        tc = min(timeit.repeat(lambda: fn(_kernels), number=number, repeat=args.repeat)) / number
        print(f"{name:42s} {tp * 1e3:12.3f} {tc * 1e3:14.3f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
