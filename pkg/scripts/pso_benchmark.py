"""Benchmark the mutating particle swarm on standard test functions and
compare the two inertia schedules.

    python3 scripts/pso_benchmark.py --dims 5 --runs 10
"""
from __future__ import annotations

import argparse

import numpy as np

from fusionquant.neural import SwarmConfig, pso_minimize


def sphere(x):
    return np.sum(x * x, axis=1)


def rastrigin(x):
    return 10 * x.shape[1] + np.sum(x * x - 10 * np.cos(2 * np.pi * x), axis=1)


def rosenbrock(x):
    return np.sum(100 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1 - x[:, :-1]) ** 2, axis=1)


FUNCTIONS = {"sphere": sphere, "rastrigin": rastrigin, "rosenbrock": rosenbrock}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, default=5)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=300)
    args = ap.parse_args(argv)

    print(f"{'function':<12}{'inertia':<12}{'median best':>14}{'worst best':>14}")
    for fname, f in FUNCTIONS.items():
        for mode in ("linear", "reciprocal"):
            best = [pso_minimize(f, args.dims, SwarmConfig(i_max=args.iterations, seed=s, inertia_mode=mode,
                                                          patience=args.iterations)).best_fitness
                    for s in range(args.runs)]
            print(f"{fname:<12}{mode:<12}{np.median(best):>14.3e}{np.max(best):>14.3e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
