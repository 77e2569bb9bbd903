"""Benchmark the blur-operator assembly backends: Cython vs numpy.

Assembly is the hot loop of the pipeline; this script times both backends
over a sweep of image sizes and blur strengths and verifies they produce
the same operator.  Run from the repository root:

    python benchmarks/bench_kernels.py
"""

import math
import time

import numpy as np

from descan import ScanParams, solve_shape
from descan.forward import operator_from_sigmas
from descan.geometry import visible_profile_at_x
from descan.kernels import assemble_gaussian_columns_numpy

try:
    from descan import _kernels

    HAVE_EXT = True
except ImportError:
    HAVE_EXT = False


def sigma_profile(n, sigma_slope):
    """Physically shaped profile: strongest blur at the spine, decaying away."""
    params = ScanParams(
        l=n / 4.0, theta0=math.pi / 4, sigma_slope=sigma_slope, d=n, alpha=2
    )
    shape = solve_shape(params, n)
    x_cols = np.arange(n) * shape.pitch
    return sigma_slope * visible_profile_at_x(shape, x_cols)


def best_of(fn, repeats=3):
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - started)
    return min(times), result


def main():
    print(f"compiled kernels available: {HAVE_EXT}")
    print(f"{'size':>10} {'sigma_max':>9} {'nnz':>12} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for n, slope in [(64, 0.05), (128, 0.05), (256, 0.05), (256, 0.10), (384, 0.05)]:
        sigmas = sigma_profile(n, slope)
        t_np, ref = best_of(
            lambda: assemble_gaussian_columns_numpy(sigmas, n, n, 0.3)
        )
        if HAVE_EXT:
            t_cy, out = best_of(
                lambda: _kernels.assemble_gaussian_columns(sigmas, n, n, 0.3)
            )
            same = (
                np.array_equal(out[0], ref[0])
                and np.array_equal(out[1], ref[1])
                and np.allclose(out[2], ref[2], atol=1e-14)
            )
            if not same:
                raise SystemExit("backend mismatch!")
            cy_col = f"{t_cy * 1e3:9.1f}ms"
            speedup = f"{t_np / t_cy:7.1f}x"
        else:
            cy_col = "      n/a"
            speedup = "     n/a"
        print(
            f"{n:>5}x{n:<4} {sigmas.max():>9.2f} {len(ref[2]):>12,} "
            f"{t_np * 1e3:9.1f}ms {cy_col} {speedup}"
        )

    # end-to-end context: operator build plus one application
    n = 256
    sigmas = sigma_profile(n, 0.05)
    started = time.perf_counter()
    op = operator_from_sigmas((n, n), sigmas)
    built = time.perf_counter() - started
    vec = np.random.default_rng(0).random(n * n)
    started = time.perf_counter()
    op.weights @ vec
    applied = time.perf_counter() - started
    print(
        f"\n256x256 operator: build {built * 1e3:.1f}ms "
        f"(backend in use), apply {applied * 1e3:.2f}ms, nnz {op.weights.nnz:,}"
    )


if __name__ == "__main__":
    main()
