"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and problem size with the best-of-N time for
each backend, the speedup, and the largest absolute disagreement.
"""

import argparse
import timeit

import numpy as np

from imel import kernels
from imel._kernels_py import discounted_cumsum as py_cumsum
from imel._kernels_py import mki_interp as py_interp
from imel._kernels_py import mki_interp_grad as py_grad


def best(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def cases(rng):
    for T in (100, 1000):
        r = rng.normal(size=T)
        yield f"discounted_cumsum T={T}", (lambda c=kernels.compiled_backend, r=r: c.discounted_cumsum(r, 0.99)), \
            (lambda r=r: py_cumsum(r, 0.99))
    for n, m, dz in ((100, 256, 2), (100, 1024, 8)):
        zt, zc = rng.normal(size=(n, dz)), rng.normal(size=(m, dz))
        L, yc = rng.normal(size=(dz, dz)), rng.normal(size=(m, 1))
        yield f"mki_interp n={n} m={m} dz={dz}", \
            (lambda c=kernels.compiled_backend, a=(zt, zc, L, yc): c.mki_interp(*a, True)), \
            (lambda a=(zt, zc, L, yc): py_interp(*a, True))
        pred, w = py_interp(zt, zc, L, yc, True)
        d_pred = rng.normal(size=pred.shape)
        args = (zt, zc, L, yc, w, pred, d_pred, True)
        yield f"mki_interp_grad n={n} m={m} dz={dz}", \
            (lambda c=kernels.compiled_backend, a=args: c.mki_interp_grad(*a)), \
            (lambda a=args: py_grad(*a))


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'cython':>10s} {'numpy':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fast, slow in cases(rng):
        tf, ts = best(fast, args.repeat), best(slow, args.repeat)
        print(f"{name:40s} {tf * 1e6:8.1f}us {ts * 1e6:8.1f}us {ts / tf:7.1f}x {max_diff(fast(), slow()):11.2e}")


if __name__ == "__main__":
    main()
