"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Prints one line
per kernel with the median time of each backend and the speedup.
"""

import argparse
import statistics
import time

import numpy as np

from jointstab import kernels


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def cases(rng):
    dx, du, m, T, k = 6, 3, 20, 40, 4
    A = rng.normal(size=(dx, dx)) * 0.4
    B = rng.normal(size=(dx, du))
    Q, R = np.eye(dx), 0.25 * np.eye(du)
    As = rng.normal(size=(m, dx, dx)) * 0.4
    Bs = rng.normal(size=(m, dx, du))
    K = rng.normal(size=(k, du, dx)) * 0.3
    epoch = np.repeat(np.arange(k), T // k)
    eta, xi = rng.normal(size=(m, T, du)), rng.normal(size=(m, T, dx))
    theta = rng.normal(size=(m, dx + du, dx))
    Z, X = rng.normal(size=(m, T, dx + du)), rng.normal(size=(m, T, dx))
    w = rng.uniform(size=(m, T))
    return {
        "dare_value_iteration": lambda mod: mod.dare_value_iteration(A, B, Q, R, 1e-10, 10000),
        "simulate": lambda mod: mod.simulate(As, Bs, K, epoch, eta, xi, 1e100),
        "weighted_residuals": lambda mod: mod.weighted_residuals(theta, Z, X, w),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    print("backends:", ", ".join(sorted(backends)))
    for name, call in cases(np.random.default_rng(0)).items():
        timings = {b: _median_time(lambda: call(mod), args.repeat) for b, mod in backends.items()}
        parts = [f"{b} {t * 1e6:9.1f} us" for b, t in sorted(timings.items())]
        if "cython" in timings:
            parts.append(f"speedup x{timings['python'] / timings['cython']:.1f}")
        print(f"{name:22s} " + "  ".join(parts))


if __name__ == "__main__":
    main()
