"""Time each hot kernel in its numba and numpy form.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants are called directly, so ``WASSCC_DISABLE_JIT`` does not matter
here. The first numba call (compilation) is excluded from the timings.
"""

import argparse
import time

import numpy as np

from wasscc import kernels as k
from wasscc.joint import random_production_instance


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    inst = random_production_instance(7283)
    x = np.full(inst.n, 40.0)
    s = inst.slack_mean(x)
    y = float(k._var_root_np(s, inst.sigma, 0.85, 1e-10))
    T = np.ascontiguousarray(inst.T_unit)
    p = rng.uniform(1e-12, 1 - 1e-12, 1_000_000)
    A = rng.normal(size=(5, 5))
    b = rng.normal(size=5)
    Z = rng.normal(size=(200_000, 5))
    v = np.sort(rng.normal(size=200_000))
    counts = rng.multinomial(v.size, np.full(v.size, 1 / v.size)).astype(np.int64)
    w = rng.normal(size=50) * 10
    cost = rng.uniform(1, 10, 50)
    return {
        "ndtri (1e6 levels)": (lambda: k._ndtri_array_nb(p), lambda: k._ndtri_array_np(p)),
        "phi quadrature + gradient": (
            lambda: k._phi_quad_nb(s, inst.sigma, T, 0.85, y, 1e-9, True, 1 << 20),
            lambda: k._phi_quad_np(s, inst.sigma, T, 0.85, y, 1e-9, True, 1 << 20),
        ),
        "VaR root": (lambda: k._var_root_nb(s, inst.sigma, 0.85, 1e-10), lambda: k._var_root_np(s, inst.sigma, 0.85, 1e-10)),
        "box+budget projection (n=50)": (
            lambda: k._project_box_budget_nb(w, 5.0, cost, 40.0),
            lambda: k._project_box_budget_np(w, 5.0, cost, 40.0),
        ),
        "row slack (2e5 x 5)": (lambda: k._row_slack_nb(A, b, Z), lambda: k._row_slack_np(A, b, Z)),
        "box excess (2e5 x 5)": (lambda: k._box_excess_nb(b, Z), lambda: k._box_excess_np(b, Z)),
        "CVaR with counts (2e5)": (
            lambda: k._cvar_sorted_counts_nb(v, counts, 0.15),
            lambda: k._cvar_sorted_counts_np(v, counts, 0.15),
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, (nb, npy) in cases().items():
        a = best_of(nb, args.repeat) * 1e3
        b = best_of(npy, args.repeat) * 1e3
        print(f"{name:32s} {a:11.3f} {b:11.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
