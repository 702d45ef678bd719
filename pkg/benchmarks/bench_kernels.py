"""Time the compiled kernels against their numpy fallbacks and check they agree.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from turbine_nbm import kernels, set_backend
from turbine_nbm._backend import HAVE_NUMBA


def cases(rng):
    xs = np.sort(rng.standard_normal(20_000))
    ys = rng.standard_normal((20_000, 4))
    Xtr = rng.standard_normal((5_000, 2))
    Ytr = rng.standard_normal((5_000, 4))
    Xq = rng.standard_normal((1_000, 2))
    innov = rng.standard_normal(200_000)
    return {
        "split_costs (20k rows, 4 targets)": lambda: kernels.split_costs(xs, ys, 28, True),
        "knn_predict (5k x 1k, K=45)": lambda: kernels.knn_predict(Xtr, Ytr, Xq, 45),
        "ar1_filter (200k steps)": lambda: kernels.ar1_filter(innov, 0.97),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    work = cases(np.random.default_rng(0))
    print(f"{'kernel':38s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  identical")
    for name, fn in work.items():
        best, out = {}, {}
        for backend in ("numba", "numpy"):
            set_backend(backend)
            out[backend] = fn()  # also triggers compilation
            best[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        same = np.array_equal(out["numba"], out["numpy"])
        print(f"{name:38s} {best['numba']:10.2f} {best['numpy']:10.2f} "
              f"{best['numpy'] / best['numba']:7.1f}x  {same}")


if __name__ == "__main__":
    main()
