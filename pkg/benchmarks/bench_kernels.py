"""Compiled vs numpy sweep kernels.

Runs the same batched sweeps with both backends, checks that the states agree
exactly, and prints wall time per backend.

    python benchmarks/bench_kernels.py [--replicas R] [--sweeps K]
"""
import argparse
import time

import numpy as np

from dobrushin_gibbs.kernels import BACKENDS, sweep_batch
from dobrushin_gibbs.models import FinitePotential, FreeModel, FinitePmf, GaussianLinear, IsingGraph


def cases():
    rng = np.random.default_rng(5)
    n = 16
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 0.2
    yield "ising path N=32", IsingGraph.path(32, 0.3), np.ones(32, dtype=np.int64), np.zeros(32, dtype=np.int64)
    yield "potential A=3 N=6", FinitePotential(6, 3, rng.normal(size=3**6)), np.zeros(6, dtype=np.int64), \
        np.full(6, 2, dtype=np.int64)
    yield "free binary N=50", FreeModel(50, FinitePmf([0.5, 0.5])), np.zeros(50, dtype=np.int64), \
        np.ones(50, dtype=np.int64)
    yield "gaussian chain N=16", GaussianLinear(A, None, 1.0), np.zeros(n), np.ones(n)


def run(model, x0, y0, replicas, sweeps, backend, coupled):
    X = np.ascontiguousarray(np.broadcast_to(x0, (replicas, x0.size)))
    Y = np.ascontiguousarray(np.broadcast_to(y0, (replicas, y0.size))) if coupled else None
    idx = np.arange(replicas, dtype=np.int64)
    t0 = time.perf_counter()
    for k in range(sweeps):
        sweep_batch(model, X, Y, 1, idx, k, backend)
    return time.perf_counter() - t0, X, Y


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicas", type=int, default=10000)
    ap.add_argument("--sweeps", type=int, default=20)
    args = ap.parse_args()
    names = sorted(BACKENDS)
    print(f"backends: {', '.join(names)}; replicas={args.replicas} sweeps={args.sweeps}")
    print(f"{'case':<24}{'mode':<9}" + "".join(f"{b:>12}" for b in names) + f"{'speedup':>10}  identical")
    for label, model, x0, y0 in cases():
        for coupled in (False, True):
            times, states = {}, {}
            for b in names:
                times[b], X, Y = run(model, x0, y0, args.replicas, args.sweeps, b, coupled)
                states[b] = (X, Y)
            same = all(np.array_equal(states[b][0], states[names[0]][0]) and
                       (not coupled or np.array_equal(states[b][1], states[names[0]][1])) for b in names)
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            mode = "coupled" if coupled else "plain"
            print(f"{label:<24}{mode:<9}" + "".join(f"{times[b]:>11.3f}s" for b in names)
                  + f"{speed:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
