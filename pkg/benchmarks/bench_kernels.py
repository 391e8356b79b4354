"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call compiles (or loads the on-disk cache); it is excluded
from the timings by a warm-up call.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from subquad_bsde import _kernels as K
from subquad_bsde import generator as gen
from subquad_bsde.bsde_solver import MarkovBsdeProblem, make_terminal, solve_backward
from subquad_bsde.sde import brownian, simulate


def cases():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(400, 401))
    table = rng.normal(size=(401, 401))
    trans = K.l1_transform_rows(table, 2.0, 0.05)
    qy, qz = rng.uniform(-9, 9, 2000), rng.uniform(-9, 9, 2000)
    phi, rhs = rng.normal(size=(100_000, 5)), rng.normal(size=(100_000, 2))
    u = rng.normal(size=400_001)
    problem = MarkovBsdeProblem(brownian(), make_terminal("cos"), gen.abs_z_alpha(0.5, 1.5), 0.0, np.array([0.0]), 1.0)
    batch = simulate(brownian(), 0.0, [0.0], 1.0, 50, 20_000, seed=1)
    return {
        "l1_transform_rows 400x401": lambda: K.l1_transform_rows(f, 2.0, 0.05),
        "infconv_query 2000 q, 401^2 table": lambda: K.infconv_query(table, trans, -10.0, -10.0, 0.05, 2.0, qy, qz),
        "gram_blocked 1e5 x 5": lambda: K.gram_blocked(phi, rhs),
        "central_diff 4e5": lambda: K.central_diff(u, 0.01),
        "solve_backward 2e4 paths x 50 steps": lambda: solve_backward(problem, batch),
    }


def bench(fn, repeat: int) -> float:
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    saved = K.get_backend()
    backends = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])
    rows = []
    try:
        for name, fn in cases().items():
            t = {}
            for b in backends:
                K.set_backend(b)
                t[b] = bench(fn, args.repeat)
            rows.append((name, t))
    finally:
        K.set_backend(saved)
    print(f"{'kernel':40s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speed-up':>9s}")
    for name, t in rows:
        nb = t.get("numba", float("nan"))
        print(f"{name:40s} {1e3 * t['numpy']:12.2f} {1e3 * nb:12.2f} {t['numpy'] / nb:9.1f}x")


if __name__ == "__main__":
    main()
