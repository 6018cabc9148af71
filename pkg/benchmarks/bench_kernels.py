"""Benchmark the stencil kernels: numba JIT vs pure numpy.

Times the negative-Laplacian matvec and a fixed-size CG solve on the
grids the experiments actually use.  Run as

    python benchmarks/bench_kernels.py

The numba path is skipped (with a note) when numba is unavailable.
"""
import time

import numpy as np

from measopt import kernels


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(dim: int, n: int, repeat: int = 5) -> None:
    rng = np.random.default_rng(0)
    total = n ** dim
    u = rng.standard_normal(total)
    b = rng.standard_normal(total)
    diag = np.abs(rng.standard_normal(total))
    h = 1.0 / (n + 1)
    inv_h2 = 1.0 / h ** 2
    print(f"dim={dim} n={n} ({total} nodes)")

    pairs = [("numpy", kernels.neg_laplacian_numpy, kernels.cg_shifted_numpy)]
    if kernels.HAVE_NUMBA:
        # trigger compilation outside the timed region
        kernels.neg_laplacian_numba(u, dim, n, inv_h2)
        kernels.cg_shifted_numba(b, diag, dim, n, h, None, 1e-8, 1e-10, 50)
        pairs.append(("numba", kernels.neg_laplacian_numba, kernels.cg_shifted_numba))
    else:
        print("  numba unavailable; timing numpy only")

    results = {}
    for name, matvec, cg in pairs:
        t_mv = _time(lambda: matvec(u, dim, n, inv_h2), repeat)
        t_cg = _time(lambda: cg(b, diag, dim, n, h, None, 1e-12, 1e-12, 200), repeat)
        results[name] = (t_mv, t_cg)
        print(f"  {name:6s} matvec {t_mv * 1e3:8.3f} ms   cg(200) {t_cg * 1e3:8.3f} ms")
    if len(results) == 2:
        mv_ratio = results["numpy"][0] / results["numba"][0]
        cg_ratio = results["numpy"][1] / results["numba"][1]
        print(f"  speedup  matvec {mv_ratio:5.2f}x  cg {cg_ratio:5.2f}x")

    x_np = kernels.neg_laplacian_numpy(u, dim, n, inv_h2)
    if kernels.HAVE_NUMBA:
        x_nb = kernels.neg_laplacian_numba(u, dim, n, inv_h2)
        gap = float(np.abs(x_np - x_nb).max())
        print(f"  backend agreement: max |numpy - numba| = {gap:.3e}")
    print()


def main() -> None:
    print(f"selected backend: {kernels.backend_name()}\n")
    bench_case(2, 255)
    bench_case(3, 63)


if __name__ == "__main__":
    main()
