"""Time the two hot kernels with and without numba compilation.

The kernel path is fixed at import time by ``ZSLINEAR_NO_NUMBA``, so this
script re-executes itself once per mode and prints a small comparison
table. The workloads mirror real use: the SVD shapes match mapped class
submatrices from the geometry objective, the tube-regression size matches
a mid-sized semantic dimension fit.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def bench_svd(repeat: int) -> float:
    from zslinear.numerics import svd

    rng = np.random.Generator(np.random.Philox(key=7))
    mats = [rng.normal(size=(8, 60)) for _ in range(40)]
    mats += [rng.normal(size=(48, 8)) for _ in range(40)]
    svd(mats[0])  # warm the JIT cache before timing
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for m in mats:
            svd(m)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_smo(repeat: int) -> float:
    from zslinear.solver import _smo_dimension

    rng = np.random.Generator(np.random.Philox(key=8))
    x = rng.normal(size=(200, 6))
    kmat = 1.0 + x @ x.T
    y = rng.uniform(-1.0, 1.0, size=200)
    _smo_dimension(kmat, y, 5.0, 0.05, 1e-6, 50)  # warmup
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        _smo_dimension(kmat, y, 5.0, 0.05, 1e-6, 2000)
        best = min(best, time.perf_counter() - t0)
    return best


def worker(repeat: int):
    from zslinear._accel import NUMBA_ENABLED

    json.dump(
        {
            "numba": NUMBA_ENABLED,
            "jacobi_svd_s": bench_svd(repeat),
            "smo_ascent_s": bench_smo(repeat),
        },
        sys.stdout,
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--worker", action="store_true")
    args = parser.parse_args()
    if args.worker:
        worker(args.repeat)
        return

    results = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, ZSLINEAR_NO_NUMBA=flag)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeat",
             str(args.repeat)],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            sys.exit(1)
        results[label] = json.loads(proc.stdout)
    assert results["numba"]["numba"] is True, "numba import failed"
    assert results["numpy"]["numba"] is False

    print(f"{'kernel':<16} {'numba':>10} {'numpy':>10} {'speedup':>9}")
    for key, title in (
        ("jacobi_svd_s", "jacobi_svd"),
        ("smo_ascent_s", "smo_ascent"),
    ):
        fast = results["numba"][key]
        slow = results["numpy"][key]
        print(f"{title:<16} {fast:>9.4f}s {slow:>9.4f}s {slow / fast:>8.1f}x")


if __name__ == "__main__":
    main()
