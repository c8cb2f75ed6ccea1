"""Time the numba and pure-numpy paths of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 112]

The first numba call includes compilation (or a cache load), so it is
excluded from the timings.  Outputs agree exactly between backends; the
script checks that too.
"""
import argparse
import time

import numpy as np

from diverse_selftrain import _kernels
from diverse_selftrain._accel import NUMBA_ENABLED


def _cases(size, rng):
    a = rng.normal(size=(size, size))
    sym = a @ a.T / size
    b = rng.normal(size=(size, 3))
    w = np.exp(rng.normal(size=6000))
    u = rng.random(40)
    conf = rng.random(200_000)
    hits = (rng.random(200_000) < conf).astype(np.float64)
    return {
        "jacobi_eigen": lambda be: _kernels.jacobi_eigen(sym, 1e-13, 60, be),
        "lu_solve": lambda be: _kernels.lu_solve(a, b, 1e-12, be),
        "weighted_draws": lambda be: _kernels.weighted_draws(w, u, be),
        "bin_stats": lambda be: _kernels.bin_stats(conf, hits, 10, be),
    }


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _same(x, y):
    if isinstance(x, tuple):
        return all(_same(a, b) for a, b in zip(x, y))
    return np.array_equal(np.asarray(x), np.asarray(y))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", type=int, default=112, help="matrix side for eigen/LU")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if not NUMBA_ENABLED:
        print("numba is disabled or missing; only the numpy path can be timed")
    cases = _cases(args.size, np.random.default_rng(args.seed))
    print(f"{'kernel':<16}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}  identical")
    for name, fn in cases.items():
        t_np, out_np = _best(lambda: fn("numpy"), args.repeat)
        if NUMBA_ENABLED:
            fn("numba")  # compile / load cache
            t_nb, out_nb = _best(lambda: fn("numba"), args.repeat)
            print(f"{name:<16}{t_np:>12.5f}{t_nb:>12.5f}{t_np / t_nb:>9.1f}x  "
                  f"{_same(out_np, out_nb)}")
        else:
            print(f"{name:<16}{t_np:>12.5f}{'-':>12}{'-':>10}  -")


if __name__ == "__main__":
    main()
