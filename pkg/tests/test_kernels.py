"""The compiled and pure-Python kernels must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bookrank import _kernels
from bookrank.regressor import Hyperparams, train

BACKENDS = _kernels.available()
needs_ext = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled extension not built")


def test_backend_selection():
    assert _kernels.BACKEND in BACKENDS
    assert "python" in BACKENDS


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_best_split_equivalence(seed, min_leaf):
    rng = np.random.default_rng(seed)
    n, f = 60, 4
    X = np.round(rng.normal(size=(n, f)), 1)
    X[rng.random((n, f)) < 0.1] = np.nan
    r = rng.normal(size=n)
    rows = np.sort(rng.choice(n, size=45, replace=False)).astype(np.int64)
    order = _kernels.presort(X)
    py = _kernels.best_split(X, r, rows, min_leaf, impl=BACKENDS["python"])
    cc = _kernels.best_split(X, r, rows, min_leaf, order=order, impl=BACKENDS["compiled"])
    assert py == cc


@needs_ext
def test_training_equivalence():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 6))
    X[::11, 3] = np.nan
    y = X[:, 0] * 2 + np.sin(X[:, 1]) + rng.normal(size=300)
    hp = Hyperparams(n_trees=25, min_leaf=8)
    a = train(X, y, hp, seed=4, impl=BACKENDS["python"])
    b = train(X, y, hp, seed=4, impl=BACKENDS["compiled"])
    assert a.dumps() == b.dumps()


@needs_ext
def test_tree_shap_equivalence():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 5))
    m = train(X, X[:, 0] * X[:, 1] + X[:, 2], Hyperparams(n_trees=15, max_depth=4, min_leaf=5), seed=2)
    trees = [t.arrays() for t in m.trees]
    for row in X[:20]:
        py = _kernels.tree_shap(trees, 5, row, m.learning_rate, impl=BACKENDS["python"])
        cc = _kernels.tree_shap(trees, 5, row, m.learning_rate, impl=BACKENDS["compiled"])
        assert np.array_equal(py, cc)


@needs_ext
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_permutation_equivalence(seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(2, 12, size=3)
    values = rng.normal(size=int(sizes.sum()))
    offsets = np.concatenate([[0], np.cumsum(sizes)]).tolist()
    n_a = [int(s) // 2 for s in sizes]
    lam = (sizes / sizes.sum()).tolist()
    args = (values, offsets, n_a, lam)
    obs_py = _kernels.observed_statistic(*args, impl=BACKENDS["python"])
    obs_cc = _kernels.observed_statistic(*args, impl=BACKENDS["compiled"])
    assert obs_py == obs_cc
    py = _kernels.perm_count(*args, 500, seed, 1e-12, impl=BACKENDS["python"])
    cc = _kernels.perm_count(*args, 500, seed, 1e-12, impl=BACKENDS["compiled"])
    assert py == cc
