"""Compare the compiled and numpy tree kernels on the synthetic benchmark data.

    python3 benchmarks/bench_forest.py --n 5000 --trees 20 --repeat 3

Prints one row per backend (fit and predict wall time, best of ``repeat``)
and checks that both backends grow identical forests.
"""
import argparse
import time

import numpy as np

from fairbench.datasets import SyntheticImbalanceConfig, generate_imbalance
from fairbench.models import ForestConfig, available_backends, fit_forest


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    data = generate_imbalance(SyntheticImbalanceConfig(n=args.n, p_s=0.2, seed=args.seed))
    forests = {}
    print(f"{'backend':<8} {'fit_s':>9} {'predict_s':>10}")
    for name in available_backends():
        cfg = ForestConfig(n_trees=args.trees, seed=args.seed, backend=name)
        fit_t, model = best_of(lambda: fit_forest(data, cfg), args.repeat)
        pred_t, _ = best_of(lambda: model.predict_scores(data.X, backend=name), args.repeat)
        forests[name] = model
        print(f"{name:<8} {fit_t:>9.4f} {pred_t:>10.4f}")
    if len(forests) == 2:
        a, b = forests["cython"], forests["python"]
        same = all(np.array_equal(getattr(a, k), getattr(b, k))
                   for k in ("feature", "threshold", "left", "right", "value", "offsets"))
        print(f"identical forests: {same}")
    else:
        print("compiled backend unavailable; only the numpy kernel was timed")


if __name__ == "__main__":
    main()
