"""Hot loops: split search, TreeSHAP and the permutation test.

The compiled extension is used when it imports; otherwise the pure
Python/numpy versions take over. Set ``BOOKRANK_PURE=1`` to force the
fallback. Both backends produce bit-identical results.
"""
import os

import numpy as np

from . import _pure

try:
    if os.environ.get("BOOKRANK_PURE", "") == "1":
        raise ImportError("pure backend requested")
    from . import _ext
except ImportError:
    _ext = None

_impl = _ext if _ext is not None else _pure
BACKEND = "compiled" if _ext is not None else "python"


def available():
    """Mapping of backend name to module for every importable backend."""
    out = {"python": _pure}
    if _ext is not None:
        out["compiled"] = _ext
    return out


def presort(X):
    """Per-feature row order by (value, row index), NaNs last: shape (F, n)."""
    X = np.asarray(X, dtype=np.float64)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)


def best_split(X, residual, rows, min_leaf, order=None, impl=None):
    impl = impl or _impl
    return impl.best_split(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(residual, dtype=np.float64),
        np.ascontiguousarray(rows, dtype=np.int64),
        int(min_leaf),
        order,
    )


def tree_shap(trees, n_features, x, scale, impl=None):
    impl = impl or _impl
    return impl.tree_shap(trees, int(n_features), np.asarray(x, dtype=np.float64), float(scale))


def perm_count(values, offsets, n_a, lam, n_perm, seed, tol, impl=None):
    impl = impl or _impl
    return impl.perm_count(
        np.ascontiguousarray(values, dtype=np.float64),
        [int(o) for o in offsets],
        [int(a) for a in n_a],
        [float(w) for w in lam],
        int(n_perm),
        int(seed),
        float(tol),
    )


def observed_statistic(values, offsets, n_a, lam, impl=None):
    impl = impl or _impl
    return impl.observed_statistic(
        np.ascontiguousarray(values, dtype=np.float64),
        [int(o) for o in offsets],
        [int(a) for a in n_a],
        [float(w) for w in lam],
    )
