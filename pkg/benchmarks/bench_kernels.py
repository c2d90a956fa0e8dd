"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each row is
the best of N runs; outputs are checked for bit identity before timing.
"""

import argparse
import timeit

import numpy as np

from cellcycle import kernels
from cellcycle.chain_sim import EmpiricalMeasure
from cellcycle.fm_metric import _merge, pairwise


def cases():
    g = np.random.default_rng(0)
    coef = g.uniform(-0.9, 0.9, (20_000, 64))
    offs = g.normal(size=(20_000, 64))
    x0 = g.normal(size=64)
    A = g.normal(size=(3, 3)) * 0.3
    offs3 = g.normal(size=(5_000, 64, 3))
    x03 = g.normal(size=(64, 3))
    mu1 = EmpiricalMeasure(g.uniform(-2, 2, (2, 1)), np.array([0.4, 0.6]))
    mu2 = EmpiricalMeasure(g.uniform(-2, 2, (3, 1)), g.dirichlet(np.ones(3)))
    z, c = _merge(mu1, mu2)
    D = pairwise(z)
    vals = np.linspace(-1, 1, 21)
    return {
        "scan_scalar 20000x64": lambda impl: kernels.scan_scalar(coef, offs, x0, impl),
        "scan_matrix 5000x64x3": lambda impl: kernels.scan_matrix(A, offs3, x03, impl),
        "grid_search 5 pts / 21 vals": lambda impl: kernels.grid_search(D, c, vals, impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        compiled = kernels.backend("compiled")
    except ImportError:
        print("compiled extension not built; only the python backend is available")
        return
    python = kernels.backend("python")
    print(f"{'kernel':<30}{'compiled [ms]':>15}{'python [ms]':>15}{'speedup':>10}")
    for name, fn in cases().items():
        a, b = fn(compiled), fn(python)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise SystemExit(f"{name}: backends disagree")
        tc = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        tp = min(timeit.repeat(lambda: fn(python), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<30}{tc:>15.3f}{tp:>15.3f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
