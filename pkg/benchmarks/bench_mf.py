"""Benchmark the SGD matrix-factorization kernel: numba JIT vs pure Python.

Usage:
    python3 benchmarks/bench_mf.py [--users 500] [--items 300] [--density 0.2]
                                   [--k 32] [--epochs 10]

The fallback path is the same code the package uses when RERANKEVAL_NO_NUMBA=1.
"""

import argparse
import time

import numpy as np

from rerankeval._kernels import _sgd_epoch_py, sgd_epoch


def make_problem(n_users, n_items, density, k, seed=0):
    rng = np.random.default_rng(seed)
    n = int(n_users * n_items * density)
    u_idx = rng.integers(0, n_users, n)
    i_idx = rng.integers(0, n_items, n)
    ratings = rng.uniform(0.5, 5.0, n)
    order = rng.permutation(n)
    uf = rng.normal(0, 0.1, (n_users, k))
    itf = rng.normal(0, 0.1, (n_items, k))
    return u_idx, i_idx, ratings, order, uf, itf, np.zeros(n_users), np.zeros(n_items)


def bench(kernel, args, epochs):
    u_idx, i_idx, ratings, order, uf, itf, ub, ib = args
    uf, itf, ub, ib = uf.copy(), itf.copy(), ub.copy(), ib.copy()
    start = time.perf_counter()
    for _ in range(epochs):
        kernel(u_idx, i_idx, ratings, order, uf, itf, ub, ib, 3.0, 0.005, 0.02)
    return time.perf_counter() - start


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--items", type=int, default=300)
    ap.add_argument("--density", type=float, default=0.2)
    ap.add_argument("--k", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=10)
    opts = ap.parse_args()

    args = make_problem(opts.users, opts.items, opts.density, opts.k)
    n = len(args[0])
    print(f"{n} interactions, k={opts.k}, {opts.epochs} epochs")

    if sgd_epoch is _sgd_epoch_py:
        print("numba unavailable or disabled; benchmarking fallback only")
    else:
        bench(sgd_epoch, args, 1)  # trigger JIT compile outside the timing
        t_jit = bench(sgd_epoch, args, opts.epochs)
        print(f"numba @njit : {t_jit:.3f}s  ({n * opts.epochs / t_jit / 1e6:.1f} M updates/s)")

    t_py = bench(_sgd_epoch_py, args, opts.epochs)
    print(f"pure python : {t_py:.3f}s  ({n * opts.epochs / t_py / 1e6:.2f} M updates/s)")
    if sgd_epoch is not _sgd_epoch_py:
        print(f"speedup     : {t_py / t_jit:.1f}x")


if __name__ == "__main__":
    main()
