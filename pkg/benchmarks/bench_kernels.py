"""Time the numba and numpy paths of each hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Prints one row per kernel: best wall time for each path, the speedup, and
the max absolute difference between the two outputs.
"""
import argparse
import time

import numpy as np

from bayesic import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation on the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale, rng):
    n_q = int(20_000 * scale)
    t = rng.uniform(0, 168, n_q)
    centers = rng.uniform(0, 168, 400)
    yield "circular_kde", (t, centers, 1.3), K.circular_kde_numba, K.circular_kde_numpy

    k = 8
    x = rng.uniform(0, 1, n_q * 5)
    w = rng.dirichlet(np.ones(k), size=x.size)
    mu = np.tile(np.linspace(0.05, 0.95, k), (x.size, 1))
    sd = np.full((x.size, k), 0.04)
    yield "mixture_pdf", (x, w, mu, sd), K.mixture_pdf_numba, K.mixture_pdf_numpy

    lats = 34.0 + rng.uniform(0, 0.5, int(200_000 * scale))
    lons = -118.5 + rng.uniform(0, 0.5, lats.size)
    yield "nearest_haversine", (34.2, -118.3, lats, lons), K.nearest_haversine_numba, K.nearest_haversine_numpy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, inputs, fast, ref in cases(args.scale, rng):
        t_fast = best_of(lambda: fast(*inputs), args.repeat)
        t_ref = best_of(lambda: ref(*inputs), args.repeat)
        a, b = fast(*inputs), ref(*inputs)
        diff = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        print(f"{name:<20}{t_fast * 1e3:>12.2f}{t_ref * 1e3:>12.2f}{t_ref / t_fast:>10.2f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
