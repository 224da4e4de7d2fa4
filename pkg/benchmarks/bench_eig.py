"""Compare the compiled and pure-Python Jacobi kernels.

    python benchmarks/bench_eig.py [--sizes 8 16 32 64] [--repeat 5]

Both kernels run the same rotation sequence, so the script also checks that
their outputs agree bit for bit.
"""

import argparse
import time

import numpy as np

from aed_eend.numerics import sym_eig


def random_symmetric(n, rng):
    a = rng.normal(size=(n, n))
    return a + a.T


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        sym_eig(np.eye(2), backend="cython")
    except ImportError:
        print("compiled kernel not built; nothing to compare")
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'n':>5} {'python ms':>11} {'cython ms':>11} {'speedup':>8}  identical")
    for n in args.sizes:
        a = random_symmetric(n, rng)
        tp = best_time(lambda: sym_eig(a, backend="python"), args.repeat)
        tc = best_time(lambda: sym_eig(a, backend="cython"), args.repeat)
        wp, vp = sym_eig(a, backend="python")
        wc, vc = sym_eig(a, backend="cython")
        same = np.array_equal(wp, wc) and np.array_equal(vp, vc)
        print(f"{n:>5} {tp * 1e3:>11.2f} {tc * 1e3:>11.2f} {tp / tc:>7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
