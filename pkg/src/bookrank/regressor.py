"""Gradient-boosted regression trees for spend and quantity deltas.

Each round fits a depth-limited tree to the current residuals. Split
structure is searched on a row subsample; leaf values are then the mean
residual of *all* training rows routed to the leaf, and covers count those
rows. Full-data leaves make every round a least-squares step on the
training set, so training loss never increases and the mean prediction
stays equal to the mean target.
"""
from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ModelIntegrityError, ServingError, TrainingError, ValidationError
from .featurizer import FeatureMatrix, FeatureMeta, assemble
from .labeler import LabelScope, build_training_set
from .ledger.model import Ledger

FORMAT = "bookrank-gbt/1"


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 300
    max_depth: int = 4
    learning_rate: float = 0.05
    row_subsample: float = 0.8
    min_leaf: int = 20

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValidationError("n_trees and max_depth must be >= 0, min_leaf >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValidationError("learning_rate must lie in (0, 1]")
        if not 0 < self.row_subsample <= 1:
            raise ValidationError("row_subsample must lie in (0, 1]")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; node 0 is the root and ``feature == -1`` marks a leaf."""

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    default_left: np.ndarray

    FIELDS = ("left", "right", "feature", "threshold", "value", "cover", "default_left")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def arrays(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            feat = self.feature[idx]
            inner = feat >= 0
            if not inner.any():
                return idx
            xv = X[rows, np.where(inner, feat, 0)]
            go_left = np.where(np.isnan(xv), self.default_left[idx] == 1, xv < self.threshold[idx])
            idx = np.where(inner, np.where(go_left, self.left[idx], self.right[idx]), idx)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def check(self) -> None:
        for i in range(self.n_nodes):
            if not self.cover[i] > 0:
                raise ModelIntegrityError(f"node {i} has non-positive cover")
            if not np.isfinite(self.value[i]):
                raise ModelIntegrityError(f"node {i} has a non-finite value")
            if self.feature[i] >= 0:
                l, r = self.left[i], self.right[i]
                if not np.isfinite(self.threshold[i]):
                    raise ModelIntegrityError(f"node {i} has a non-finite threshold")
                if self.cover[l] + self.cover[r] != self.cover[i]:
                    raise ModelIntegrityError(f"node {i} cover differs from its children's total")

    def to_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        dtypes = (np.int64, np.int64, np.int64, np.float64, np.float64, np.float64, np.int8)
        return cls(*(np.asarray(d[f], dtype=t) for f, t in zip(cls.FIELDS, dtypes)))

    @classmethod
    def leaf(cls, value: float, cover: float) -> "Tree":
        return cls(
            np.array([-1]), np.array([-1]), np.array([-1]), np.array([0.0]),
            np.array([float(value)]), np.array([float(cover)]), np.array([1], dtype=np.int8),
        )


@dataclass(frozen=True)
class GbtEnsemble:
    base_score: float
    trees: tuple[Tree, ...]
    learning_rate: float
    hyperparams: Hyperparams
    schema_hash: str
    columns: tuple[str, ...] = ()
    seed: int = 0
    encoder_state: dict | None = field(default=None, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def predict(self, X) -> np.ndarray:
        """Predictions for the rows of ``X`` (array or FeatureMatrix)."""
        X = self._check(X)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def staged_predict(self, X):
        """Predictions after 0, 1, ... n_trees rounds."""
        X = self._check(X)
        out = np.full(X.shape[0], self.base_score)
        yield out.copy()
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
            yield out.copy()

    def _check(self, X) -> np.ndarray:
        if isinstance(X, FeatureMatrix):
            if X.schema_hash != self.schema_hash:
                raise ServingError(f"feature schema {X.schema_hash} does not match model schema {self.schema_hash}")
            X = X.values
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if self.columns and X.shape[1] != len(self.columns):
            raise ServingError(f"expected {len(self.columns)} features, got {X.shape[1]}")
        return X

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "hyperparams": asdict(self.hyperparams),
            "seed": self.seed,
            "schema_hash": self.schema_hash,
            "columns": list(self.columns),
            "encoder_state": self.encoder_state,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtEnsemble":
        if d.get("format") != FORMAT:
            raise ModelIntegrityError(f"unsupported model format {d.get('format')!r}")
        trees = tuple(Tree.from_dict(t) for t in d["trees"])
        for t in trees:
            t.check()
        return cls(
            d["base_score"], trees, d["learning_rate"], Hyperparams(**d["hyperparams"]),
            d["schema_hash"], tuple(d["columns"]), d["seed"], d.get("encoder_state"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "GbtEnsemble":
        return cls.from_dict(json.loads(text))


def predict(ensemble: GbtEnsemble, row) -> float:
    return float(ensemble.predict(row)[0])


# -- training -------------------------------------------------------------------

def _grow(X, residual, sample, hp: Hyperparams, impl, order=None) -> Tree:
    left, right, feature, threshold, default_left = [], [], [], [], []

    def new_node():
        for a, v in ((left, -1), (right, -1), (feature, -1), (threshold, 0.0), (default_left, 1)):
            a.append(v)
        return len(feature) - 1

    stack = [(new_node(), sample, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= hp.max_depth:
            continue
        split = _kernels.best_split(X, residual, rows, hp.min_leaf, order=order, impl=impl)
        if split is None:
            continue
        _, f, thr, dl = split
        v = X[rows, f]
        go_left = np.where(np.isnan(v), dl, v < thr)
        l, r = new_node(), new_node()
        left[node], right[node], feature[node] = l, r, f
        threshold[node], default_left[node] = thr, int(dl)
        stack.append((r, rows[~go_left], depth + 1))
        stack.append((l, rows[go_left], depth + 1))

    n_nodes = len(feature)
    tree = Tree(
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64), np.zeros(n_nodes), np.zeros(n_nodes),
        np.array(default_left, dtype=np.int8),
    )
    return _refit(tree, X, residual)


def _refit(tree: Tree, X, residual) -> Tree:
    """Set leaf values and covers from every training row."""
    n_nodes = tree.n_nodes
    leaf = tree.apply(X)
    cover = np.bincount(leaf, minlength=n_nodes).astype(np.float64)
    sums = np.zeros(n_nodes)
    # sequential accumulation keeps the sums independent of numpy's pairwise blocking
    for i, r in zip(leaf.tolist(), residual.tolist()):
        sums[i] += r
    # internal nodes: children are appended after their parent, so walk backwards
    for i in range(n_nodes - 1, -1, -1):
        if tree.feature[i] >= 0:
            cover[i] = cover[tree.left[i]] + cover[tree.right[i]]
            sums[i] = sums[tree.left[i]] + sums[tree.right[i]]
    value = sums / cover
    return Tree(tree.left, tree.right, tree.feature, tree.threshold, value, cover, tree.default_left)


def train(
    X,
    targets: Sequence[float] | None = None,
    hyperparams: Hyperparams | None = None,
    seed: int = 0,
    *,
    schema_hash: str = "",
    columns: Sequence[str] = (),
    impl=None,
) -> GbtEnsemble:
    """Fit a squared-error boosted ensemble.

    ``X`` may be a FeatureMatrix, in which case targets, schema and encoder
    state default to the matrix's own.
    """
    hp = hyperparams or Hyperparams()
    encoder_state = None
    if isinstance(X, FeatureMatrix):
        schema_hash = schema_hash or X.schema_hash
        columns = columns or X.columns
        encoder_state = X.encoder_state
        if targets is None:
            targets = X.targets
        X = X.values
    if targets is None:
        raise ValidationError("targets are required")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError("feature matrix and targets are misaligned")
    if not np.isfinite(y).all():
        raise ValidationError("targets must be finite")
    n = y.shape[0]
    if n < 2 * hp.min_leaf:
        raise TrainingError(f"{n} rows is fewer than 2*min_leaf={2 * hp.min_leaf}")
    if not columns:
        columns = tuple(f"f{j}" for j in range(X.shape[1]))

    base = float(y[0]) if (y == y[0]).all() else float(np.mean(y))
    rng = np.random.default_rng(seed)
    m = max(2 * hp.min_leaf, int(round(hp.row_subsample * n)))
    m = min(m, n)
    pred = np.full(n, base)
    order = _kernels.presort(X)
    trees = []
    for _ in range(hp.n_trees):
        residual = y - pred
        sample = np.arange(n, dtype=np.int64) if m == n else np.sort(rng.permutation(n)[:m]).astype(np.int64)
        tree = _grow(X, residual, sample, hp, impl, order)
        trees.append(tree)
        pred = pred + hp.learning_rate * tree.predict(X)
    return GbtEnsemble(base, tuple(trees), hp.learning_rate, hp, schema_hash, tuple(columns), int(seed), encoder_state)


# -- model suites -------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSuite:
    account_model: GbtEnsemble
    product_models: dict
    trained_at: date

    def model_for(self, scope: LabelScope) -> GbtEnsemble:
        if scope.product_id is None:
            return self.account_model
        try:
            return self.product_models[scope.product_id]
        except KeyError:
            raise ServingError(f"no model for product {scope.product_id}") from None

    def scopes(self) -> list[LabelScope]:
        return [LabelScope.account()] + [LabelScope.product(p) for p in sorted(self.product_models)]

    def save(self, directory, provenance: dict | None = None) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        index = {"trained_at": self.trained_at.isoformat(), "models": {}}
        if provenance is not None:
            index["provenance"] = provenance
        for scope in self.scopes():
            name = f"{scope.key}.json"
            (out / name).write_text(self.model_for(scope).dumps() + "\n", encoding="utf-8")
            index["models"][scope.key] = name
        (out / "suite.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ModelSuite":
        root = Path(directory)
        index_path = root / "suite.json"
        if not index_path.is_file():
            raise ServingError(f"no model suite found in {root}")
        index = json.loads(index_path.read_text(encoding="utf-8"))
        models = {k: GbtEnsemble.loads((root / v).read_text(encoding="utf-8")) for k, v in index["models"].items()}
        if "account" not in models:
            raise ModelIntegrityError("suite lacks the account model")
        products = {k[len("product_"):]: v for k, v in models.items() if k != "account"}
        return cls(models["account"], products, date.fromisoformat(index["trained_at"]))


def scope_seed(seed: int, scope: LabelScope) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(scope.key.encode())]).generate_state(1)[0])


def train_suite(
    ledger: Ledger,
    as_of: date,
    meta: Sequence[FeatureMeta],
    hyperparams: Hyperparams | None = None,
    seed: int = 0,
    *,
    lookback_months: int = 24,
    training_set: dict | None = None,
) -> ModelSuite:
    """Account model plus one model per product with enough samples."""
    hp = hyperparams or Hyperparams()
    samples = training_set if training_set is not None else build_training_set(ledger, as_of, lookback_months)
    account_scope = LabelScope.account()
    if not samples.get(account_scope):
        raise TrainingError(f"no account-scope training samples as of {as_of}")
    products = {}
    account_model = None
    for scope, rows in samples.items():
        if scope != account_scope and len(rows) < 2 * hp.min_leaf:
            warnings.warn(f"skipping {scope.key}: {len(rows)} samples is below 2*min_leaf", stacklevel=2)
            continue
        matrix = assemble(ledger, rows, meta)
        model = train(matrix, hyperparams=hp, seed=scope_seed(seed, scope))
        if scope == account_scope:
            account_model = model
        else:
            products[scope.product_id] = model
    return ModelSuite(account_model, products, as_of)
