import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bookrank import interpreter as I
from bookrank.errors import ModelIntegrityError, OracleScopeError
from bookrank.regressor import GbtEnsemble, Hyperparams, Tree, train


def make_tree(nodes):
    """nodes: list of (left, right, feature, threshold, value, cover); leaves use feature -1."""
    cols = list(zip(*nodes))
    return Tree(
        np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3], dtype=float),
        np.array(cols[4], dtype=float), np.array(cols[5], dtype=float), np.ones(len(nodes), dtype=np.int8),
    )


def ensemble(*trees, n_features=3, base=0.0, lr=1.0):
    return GbtEnsemble(base, trees, lr, Hyperparams(), "h", tuple(f"f{j}" for j in range(n_features)))


STUMP = make_tree([(1, 2, 0, 0.5, 0, 100), (-1, -1, -1, 0, 1, 30), (-1, -1, -1, 0, 2, 70)])

# root on f0; left (cover 40) splits f1 into 1|3, right (cover 60) splits f2 into 5|9
DEPTH2 = make_tree([
    (1, 2, 0, 0.5, 0, 100),
    (3, 4, 1, 0.5, 0, 40),
    (5, 6, 2, 0.5, 0, 60),
    (-1, -1, -1, 0, 1, 10),
    (-1, -1, -1, 0, 3, 30),
    (-1, -1, -1, 0, 5, 20),
    (-1, -1, -1, 0, 9, 40),
])


def test_stump_empty_subset():
    assert I.conditional_expectation(STUMP, [0.0], ()) == pytest.approx(1.7, abs=1e-15)


def test_full_subset_is_prediction():
    row = np.array([1.0, 0.0, 1.0])
    assert I.conditional_expectation(DEPTH2, row, (0, 1, 2)) == DEPTH2.predict(row[None, :])[0] == 9


def test_single_leaf():
    leaf = Tree.leaf(4.5, 10)
    for S in [(), (0,), (0, 1)]:
        assert I.conditional_expectation(leaf, [1.0, 2.0], S) == 4.5
    a = I.brute_force_shapley(ensemble(leaf, leaf, n_features=2), [1.0, 2.0])
    assert a.base_value == 9.0
    assert np.all(a.phi == 0)


def test_zero_cover_is_integrity_error():
    bad = make_tree([(1, 2, 0, 0.5, 0, 0), (-1, -1, -1, 0, 1, 0), (-1, -1, -1, 0, 2, 0)])
    with pytest.raises(ModelIntegrityError):
        I.conditional_expectation(bad, [0.0], ())


def test_stump_dummy_features():
    a = I.tree_shap(ensemble(STUMP, n_features=4), [0.0, 5.0, 6.0, 7.0])
    assert a.phi[1:].tolist() == [0.0, 0.0, 0.0]
    assert a.phi[0] == pytest.approx(1 - 1.7)


def test_depth2_hand_table():
    # v(S) by hand: {}=5.6 {0}=23/3 {1}=5.0 {2}=6.4 {0,1}=23/3 {0,2}=9 {1,2}=5.8 {0,1,2}=9
    expected = [79 / 30, -3 / 10, 16 / 15]
    row = [1.0, 0.0, 1.0]
    for explain in (I.brute_force_shapley, I.tree_shap):
        a = explain(ensemble(DEPTH2), row)
        assert a.base_value == pytest.approx(5.6, abs=1e-12)
        assert np.allclose(a.phi, expected, rtol=0, atol=1e-12)


def test_additivity_over_trees():
    row = [1.0, 0.0, 1.0]
    both = I.tree_shap(ensemble(STUMP, DEPTH2), row).phi
    parts = I.tree_shap(ensemble(STUMP), row).phi + I.tree_shap(ensemble(DEPTH2), row).phi
    assert np.allclose(both, parts, rtol=0, atol=1e-12)


def test_symmetric_features_share_credit():
    # output depends on (x0, x1) symmetrically: 0, 1, 1, 4
    sym = make_tree([
        (1, 2, 0, 0.5, 0, 100),
        (3, 4, 1, 0.5, 0, 50),
        (5, 6, 1, 0.5, 0, 50),
        (-1, -1, -1, 0, 0, 25),
        (-1, -1, -1, 0, 1, 25),
        (-1, -1, -1, 0, 1, 25),
        (-1, -1, -1, 0, 4, 25),
    ])
    a = I.tree_shap(ensemble(sym, n_features=2), [1.0, 1.0])
    assert a.phi[0] == pytest.approx(a.phi[1], abs=1e-15)


def test_oracle_scope_limit():
    stumps = [
        make_tree([(1, 2, j, 0.5, 0, 2), (-1, -1, -1, 0, 0, 1), (-1, -1, -1, 0, 1, 1)])
        for j in range(I.ORACLE_MAX_FEATURES + 1)
    ]
    with pytest.raises(OracleScopeError):
        I.brute_force_shapley(ensemble(*stumps, n_features=len(stumps)), np.zeros(len(stumps)))


def random_instance(seed):
    rng = np.random.default_rng(seed)
    n_features = int(rng.integers(2, 11))
    X = rng.normal(size=(120, n_features))
    X[rng.random(X.shape) < 0.05] = np.nan
    y = np.nan_to_num(X) @ rng.normal(size=n_features) + rng.normal(size=120)
    hp = Hyperparams(n_trees=int(rng.integers(1, 6)), max_depth=int(rng.integers(1, 4)),
                     learning_rate=0.3, row_subsample=0.8, min_leaf=5)
    m = train(X, y, hp, seed=seed)
    row = X[int(rng.integers(0, 120))]
    return m, row


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_tree_shap_matches_oracle(seed):
    m, row = random_instance(seed)
    fast = I.tree_shap(m, row)
    slow = I.brute_force_shapley(m, row)
    assert np.max(np.abs(fast.phi - slow.phi)) <= 1e-9
    assert fast.base_value == pytest.approx(slow.base_value, abs=1e-12)
    assert abs(fast.residual()) <= 1e-9 * max(1.0, abs(fast.prediction))


def test_unused_feature_is_exactly_zero():
    for seed in range(10):
        m, row = random_instance(seed)
        used = set(I.active_features(m))
        phi = I.tree_shap(m, row).phi
        assert all(phi[j] == 0.0 for j in range(len(phi)) if j not in used)


def test_attributions_round_trip(tmp_path):
    m, row = random_instance(3)
    a = I.tree_shap(m, row, account_id="A1")
    p = tmp_path / "a.jsonl"
    I.write_attributions([a], p, provenance={"stage": "explain"})
    (back,) = I.read_attributions(p)
    assert back.account_id == "A1"
    assert np.array_equal(back.phi, a.phi)
    assert back.base_value == a.base_value
