"""Benchmark the compiled coordinate-descent kernel against the NumPy one.

Both kernels execute the same arithmetic sequence, so results are bitwise
identical; this script measures only the speed gap on representative
problem sizes.

Usage: python benchmarks/bench_cd.py [--repeats 7]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hd2sls import _cd_fallback

try:
    from hd2sls import _cd_kernel
except ImportError:
    _cd_kernel = None

SIZES = [
    (47, 100, 0.3130),  # catalogue second stage, small n
    (47, 100, 0.1252),  # catalogue first stage, small n
    (4700, 100, 0.0313),  # catalogue second stage, large n
    (200, 50, 0.05),
    (60, 120, 0.01),  # underdetermined, slow-convergence regime
]


def make_instance(n: int, m: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m))
    y = rng.standard_normal(n)
    G = np.ascontiguousarray(X.T @ X / n)
    q = np.ascontiguousarray(X.T @ y / n)
    return G, q


def time_kernel(kernel, G, q, lam: float, repeats: int) -> tuple[float, int]:
    best = float("inf")
    sweeps = 0
    for _ in range(repeats):
        beta = np.zeros(q.shape[0])
        s = np.zeros(q.shape[0])
        start = time.perf_counter()
        sweeps, _ = kernel.cd_lasso_gram(G, q, lam, 1e-8, 10_000, beta, s)
        best = min(best, time.perf_counter() - start)
    return best, sweeps


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing repeats per instance (best is reported)")
    args = parser.parse_args()

    if _cd_kernel is None:
        print("compiled kernel not available; showing the fallback only")

    header = f"{'n':>6} {'m':>4} {'lam':>8} {'sweeps':>7} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for seed, (n, m, lam) in enumerate(SIZES):
        G, q = make_instance(n, m, seed)
        t_np, sweeps = time_kernel(_cd_fallback, G, q, lam, args.repeats)
        if _cd_kernel is not None:
            t_cy, sweeps_cy = time_kernel(_cd_kernel, G, q, lam, args.repeats)
            if sweeps_cy != sweeps:
                raise AssertionError("kernels disagree on sweep count")
            beta_np, s_np = np.zeros(m), np.zeros(m)
            beta_cy, s_cy = np.zeros(m), np.zeros(m)
            _cd_fallback.cd_lasso_gram(G, q, lam, 1e-8, 10_000, beta_np, s_np)
            _cd_kernel.cd_lasso_gram(G, q, lam, 1e-8, 10_000, beta_cy, s_cy)
            if not np.array_equal(beta_np, beta_cy):
                raise AssertionError("kernels disagree bitwise")
            print(f"{n:>6} {m:>4} {lam:>8.4f} {sweeps:>7} {t_np:>9.4f}s {t_cy:>9.4f}s {t_np / t_cy:>7.1f}x")
        else:
            print(f"{n:>6} {m:>4} {lam:>8.4f} {sweeps:>7} {t_np:>9.4f}s {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
