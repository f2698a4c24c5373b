"""Time the numba and numpy SGD kernels on benchmark-sized probe problems.

    python benchmarks/bench_kernels.py [--repeats 5]

Both kernels are imported in one process (the numba one only if numba is
installed), run on identical inputs, and checked for agreement.
"""

import argparse
import time

import numpy as np

from csl import _kernels

# (label, rows, features, classes, epochs): student probe and weak teacher
PROBLEMS = [
    ("student 5120x64 C=16, 20 ep", 5120, 64, 16, 20),
    ("teacher 6400x8 C=16, 1 ep", 6400, 8, 16, 1),
    ("local student 640x64 C=16, 20 ep", 640, 64, 16, 20),
]


def make(n, d, c, epochs, batch=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    T = np.eye(c)[rng.integers(0, c, n)]
    W = rng.uniform(-1, 1, (c, d)) / np.sqrt(d)
    spe = -(-n // batch)
    perms = np.stack([rng.permutation(n) for _ in range(epochs)])
    return W, np.zeros(c), X, T, perms, spe, batch, epochs * spe


def best_time(fn, args, repeats):
    times = []
    for _ in range(repeats):
        W, b = args[0].copy(), args[1].copy()
        t0 = time.perf_counter()
        fn(W, b, *args[2:7], 0.1, 0.9, args[7])
        times.append(time.perf_counter() - t0)
    return min(times), W


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"selected backend: {_kernels.backend()}")
    jit = _kernels.sgd if _kernels.HAS_NUMBA else None
    if jit is None:
        print("numba unavailable or disabled; timing the numpy path only")
    else:
        # compile (or load from cache) outside the timed region
        warm = make(64, 4, 3, 1)
        jit(warm[0].copy(), warm[1].copy(), *warm[2:7], 0.1, 0.9, warm[7])
    print(f"{'problem':36s} {'numpy s':>9s} {'numba s':>9s} {'speedup':>8s} {'max |dW|':>9s}")
    for label, n, d, c, ep in PROBLEMS:
        prob = make(n, d, c, ep)
        t_np, W_np = best_time(_kernels.sgd_numpy, prob, args.repeats)
        if jit is None:
            print(f"{label:36s} {t_np:9.4f} {'-':>9s} {'-':>8s} {'-':>9s}")
            continue
        t_jit, W_jit = best_time(jit, prob, args.repeats)
        diff = np.abs(W_np - W_jit).max()
        print(f"{label:36s} {t_np:9.4f} {t_jit:9.4f} {t_np / t_jit:7.2f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
