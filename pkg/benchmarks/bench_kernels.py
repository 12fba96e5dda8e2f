"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from bookrank import _kernels
from bookrank.regressor import Hyperparams, train


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3000, 20))
    X[rng.random(X.shape) < 0.03] = np.nan
    y = np.nan_to_num(X[:, 0]) * 3 + np.sin(np.nan_to_num(X[:, 1])) + rng.normal(size=3000)
    rows = np.arange(3000, dtype=np.int64)
    order = _kernels.presort(X)
    model = train(X, y, Hyperparams(n_trees=100, max_depth=4, min_leaf=20), seed=1)
    trees = [t.arrays() for t in model.trees]
    sizes = [400, 300, 500, 250]
    values = rng.normal(size=sum(sizes))
    offsets = np.concatenate([[0], np.cumsum(sizes)]).tolist()
    n_a = [s // 2 for s in sizes]
    lam = [s / sum(sizes) for s in sizes]
    return {
        "best_split (3000x20)": lambda impl: _kernels.best_split(X, y - y.mean(), rows, 20, order=order, impl=impl),
        "train (30 trees)": lambda impl: train(X, y, Hyperparams(n_trees=30, min_leaf=20), seed=1, impl=impl),
        "tree_shap (100 trees, 50 rows)": lambda impl: [
            _kernels.tree_shap(trees, 20, row, model.learning_rate, impl=impl) for row in X[:50]
        ],
        "perm_count (1450 values, 2000 perms)": lambda impl: _kernels.perm_count(
            values, offsets, n_a, lam, 2000, 7, 1e-12, impl=impl
        ),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    backends = _kernels.available()
    if "compiled" not in backends:
        print("compiled extension not built; timing the pure-Python backend only")
    print(f"{'kernel':<38}" + "".join(f"{name:>12}" for name in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases().items():
        times = {b: best_of(lambda: fn(impl), args.repeat) for b, impl in backends.items()}
        line = f"{name:<38}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times.values())
        if len(times) > 1:
            line += f"{times['python'] / times['compiled']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
