"""Per-instance Shapley attributions for boosted tree ensembles.

Attributions use the path-dependent value function: with a feature subset
S known, a split on a feature in S follows the row and any other split
averages both children weighted by their training cover. ``tree_shap`` is
the polynomial-time exact algorithm; ``brute_force_shapley`` enumerates
subsets and exists to check it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ModelIntegrityError, OracleScopeError
from .featurizer import FeatureMatrix
from .labeler import LabelScope, ScopeKind
from .regressor import GbtEnsemble, Tree

ORACLE_MAX_FEATURES = 12


@dataclass(frozen=True)
class Attribution:
    account_id: str
    base_value: float
    phi: np.ndarray
    prediction: float
    features: tuple[str, ...] = ()
    scope: LabelScope | None = None

    def named(self) -> dict:
        return dict(zip(self.features, (float(v) for v in self.phi)))

    def residual(self) -> float:
        """Local-accuracy gap: prediction minus (base + sum of phi)."""
        return self.prediction - (self.base_value + float(np.sum(self.phi)))


def conditional_expectation(tree: Tree, row, subset) -> float:
    """Expected tree output at ``row`` when only features in ``subset`` are known."""
    known = set(subset)

    def walk(node):
        f = int(tree.feature[node])
        if f < 0:
            return float(tree.value[node])
        l, r = int(tree.left[node]), int(tree.right[node])
        if f in known:
            x = row[f]
            go_left = bool(tree.default_left[node]) if x != x else x < tree.threshold[node]
            return walk(l if go_left else r)
        c = float(tree.cover[node])
        if not c > 0:
            raise ModelIntegrityError(f"node {node} has zero cover")
        return (tree.cover[l] * walk(l) + tree.cover[r] * walk(r)) / c

    return walk(0)


def _ensemble_value(ensemble: GbtEnsemble, row, subset) -> float:
    return ensemble.base_score + ensemble.learning_rate * sum(
        conditional_expectation(t, row, subset) for t in ensemble.trees
    )


def active_features(ensemble: GbtEnsemble) -> list[int]:
    used = set()
    for t in ensemble.trees:
        used.update(int(f) for f in t.feature if f >= 0)
    return sorted(used)


def _n_features(ensemble: GbtEnsemble, row) -> int:
    return ensemble.n_features or len(row)


def brute_force_shapley(ensemble: GbtEnsemble, row, account_id: str = "") -> Attribution:
    """Shapley values by enumerating every subset of the features the ensemble uses."""
    row = np.asarray(row, dtype=float)
    active = active_features(ensemble)
    n = len(active)
    if n > ORACLE_MAX_FEATURES:
        raise OracleScopeError(f"{n} active features exceeds the oracle limit of {ORACLE_MAX_FEATURES}")
    values = {}
    for size in range(n + 1):
        for combo in combinations(active, size):
            values[frozenset(combo)] = _ensemble_value(ensemble, row, combo)
    phi = np.zeros(_n_features(ensemble, row))
    for j in active:
        others = [f for f in active if f != j]
        total = 0.0
        for size in range(n):
            weight = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
            for combo in combinations(others, size):
                s = frozenset(combo)
                total += weight * (values[s | {j}] - values[s])
        phi[j] = total
    return Attribution(
        account_id, values[frozenset()], phi, float(ensemble.predict(row)[0]), tuple(ensemble.columns)
    )


def expected_value(ensemble: GbtEnsemble) -> float:
    return _ensemble_value(ensemble, (), ())


def tree_shap(ensemble: GbtEnsemble, row, account_id: str = "", scope: LabelScope | None = None, *, impl=None) -> Attribution:
    row = np.asarray(row, dtype=float)
    arrays = [t.arrays() for t in ensemble.trees]
    phi = _kernels.tree_shap(arrays, _n_features(ensemble, row), row, ensemble.learning_rate, impl=impl)
    return Attribution(
        account_id, expected_value(ensemble), phi, float(ensemble.predict(row)[0]), tuple(ensemble.columns), scope
    )


def explain_matrix(ensemble: GbtEnsemble, matrix: FeatureMatrix) -> list[Attribution]:
    preds = ensemble.predict(matrix)  # also checks the schema
    base = expected_value(ensemble)
    arrays = [t.arrays() for t in ensemble.trees]
    out = []
    for key, row, pred in zip(matrix.keys, matrix.values, preds):
        phi = _kernels.tree_shap(arrays, len(matrix.columns), row, ensemble.learning_rate)
        out.append(Attribution(key.account_id, base, phi, float(pred), matrix.columns, key.scope))
    return out


def write_attributions(attributions, path, provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True, separators=(",", ":")) + "\n")
        for a in attributions:
            scope = a.scope or LabelScope.account()
            rec = {
                "account_id": a.account_id,
                "scope": scope.kind.value,
                "product_id": scope.product_id,
                "base_value": a.base_value,
                "prediction": a.prediction,
                "phi": a.named(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_attributions(path) -> list[Attribution]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "account_id" not in rec:
            continue  # provenance record
        names = tuple(rec["phi"])
        scope = LabelScope(ScopeKind(rec["scope"]), rec["product_id"])
        out.append(
            Attribution(
                rec["account_id"], rec["base_value"], np.array([rec["phi"][k] for k in names]), rec["prediction"], names, scope
            )
        )
    return out
