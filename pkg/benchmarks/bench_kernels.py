"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py --samples 200000 --dims 2,3,4 --repeat 5

Both backends run on the same draws; the max absolute difference of the
accumulated sums is printed next to the timings.
"""

import argparse
import time

import numpy as np

from simplexcode import _accel
from simplexcode.gaussian import normal_stream
from simplexcode.geometry import optimal_vertices, regular_simplex


def best_of(fn, repeat):
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def max_diff(a, b):
    return max(float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--dims", default="2,3,4")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=1.0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba unavailable; nothing to compare")
        return
    print(f"{'kernel':<18}{'n':>3}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}{'max diff':>11}")
    for n in (int(x) for x in args.dims.split(",")):
        w = regular_simplex(n)
        cone = optimal_vertices(w).cell(0)
        c, E = w.words[0], cone.normals
        Z = normal_stream(0, args.samples, n)
        X = c + args.sigma * Z
        cases = {
            "plain_accumulate": lambda b: _accel.plain_accumulate(Z, c, args.sigma, E, backend=b),
            "line_accumulate": lambda b: _accel.line_accumulate(Z, c, args.sigma, E, c, backend=b),
            "line_weights": lambda b: _accel.line_weights(Z, c, args.sigma, E, c, backend=b),
            "membership": lambda b: _accel.membership(X, E, backend=b),
        }
        for name, fn in cases.items():
            t_nb = best_of(lambda: fn("numba"), args.repeat)
            t_np = best_of(lambda: fn("numpy"), args.repeat)
            a, b = fn("numba"), fn("numpy")
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            d = max_diff(a, b)
            print(f"{name:<18}{n:>3}{1e3 * t_nb:>11.2f}{1e3 * t_np:>11.2f}{t_np / t_nb:>9.1f}{d:>11.1e}")


if __name__ == "__main__":
    main()
