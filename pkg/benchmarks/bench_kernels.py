"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is called on the same inputs through both paths; the compiled
path is warmed up once so compilation time is excluded.
"""

import argparse
import timeit

import numpy as np

from valuedecomp import kernels
from valuedecomp.gradsurgery import normalized_gram


def cases(rng):
    grads = rng.normal(size=(4, 20_000))
    gram = normalized_gram(grads)
    rewards = rng.normal(size=(1000, 4))
    v = rng.normal(size=4)
    w = rng.dirichlet(np.ones(4))
    return {
        "project_simplex (k=4)": (kernels.project_simplex_numpy, kernels.project_simplex_numba, (v,)),
        "cagrad_pgd (k=4, 200 iters)": (kernels.cagrad_pgd_numpy, kernels.cagrad_pgd_numba, (gram, 0.5, 200, 0.1)),
        "gram_objective (k=4)": (kernels.cagrad_gram_objective_numpy, kernels.cagrad_gram_objective_numba, (w, gram, 0.5)),
        "discounted_returns (1000x4)": (kernels.discounted_returns_numpy, kernels.discounted_returns_numba, (rewards, 0.99)),
    }


def best_of(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    args = parser.parse_args(argv)
    if not kernels.NUMBA_ENABLED:
        raise SystemExit("numba is disabled (VALUEDECOMP_DISABLE_NUMBA set or numba missing); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, (np_fn, nb_fn, fn_args) in cases(rng).items():
        nb_fn(*fn_args)  # compile
        t_np = best_of(np_fn, fn_args, args.repeat, args.number)
        t_nb = best_of(nb_fn, fn_args, args.repeat, args.number)
        print(f"{name:<30}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
