import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bookrank import featurizer as F
from bookrank.errors import ConfigurationError, FitError
from bookrank.labeler import LabelScope, build_training_set


@pytest.fixture(scope="module")
def train_matrix(small_ledger):
    samples = build_training_set(small_ledger, small_ledger.end)[LabelScope.account()]
    return F.assemble(small_ledger, samples, F.load_meta())


def test_derive_rate():
    assert F.derive_rate(30, 100) == pytest.approx(0.30)
    assert F.derive_rate(0, 0) == 0.0
    assert math.isnan(F.derive_rate(5, 0))
    assert math.isnan(F.derive_rate(None, 3))


def test_missing_rate_imputed_to_training_median():
    meta = [m for m in F.load_meta() if m.original_name == "viewers_per_job"]
    raw = {"viewers_per_job": [1.0, 3.0, F.derive_rate(5, 0), 10.0]}
    state = F.fit_state(raw, np.zeros(4), meta)
    assert state["params"]["viewers_per_job"]["median"] == 3.0
    out = F._transform(raw, meta, state, 4)
    assert out[2, 0] == 3.0


def test_response_encode_hand_oracle():
    enc, vals = F.response_encode(["A", "A", "B"], [1, 1, 3], smoothing=1)
    gm = 5 / 3
    assert enc.levels["A"] == pytest.approx((2 + gm) / 3, rel=1e-15)
    assert enc.levels["B"] == pytest.approx((3 + gm) / 2, rel=1e-15)
    assert enc.transform(["unseen"])[0] == pytest.approx(gm)


def test_single_category_unsmoothed_is_global_mean():
    _, vals = F.response_encode(["x"] * 5, [1, 2, 3, 4, 10], smoothing=0)
    assert np.allclose(vals, 4.0)


def test_large_category_approaches_its_mean():
    cats = ["big"] * 100_000 + ["small"] * 10
    y = [2.0] * 100_000 + [50.0] * 10
    enc, _ = F.response_encode(cats, y, smoothing=10)
    assert enc.levels["big"] == pytest.approx(2.0, abs=1e-2)


def test_encoder_fit_on_empty_is_error():
    with pytest.raises(FitError):
        F.response_encode([], [])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from("abcde"), st.floats(-1e6, 1e6)), min_size=1, max_size=40),
    st.floats(0, 100),
)
def test_encoding_bounded_by_training_targets(rows, m):
    cats, y = zip(*rows)
    _, vals = F.response_encode(list(cats), list(y), smoothing=m)
    assert vals.min() >= min(y) and vals.max() <= max(y)


def test_caps():
    vals, caps = F.cap_outliers([4.0] * 50)
    assert np.all(vals == 4.0)
    data = list(range(1, 101)) + [10_000]
    capped, (lo, hi) = F.cap_outliers(data)
    assert capped[-1] == hi == np.percentile(data, 99)
    with pytest.raises(FitError):
        F.fit_caps([])


def test_normal_p99_cap():
    z = np.random.default_rng(0).standard_normal(100_000)
    _, hi = F.fit_caps(z)
    assert 2.0 <= hi <= 2.6


def test_empty_samples_give_full_schema(small_ledger):
    m = F.assemble(small_ledger, [], F.load_meta())
    assert m.values.shape == (0, len(F.load_meta()))


def test_assemble_deterministic(small_ledger, train_matrix):
    samples = build_training_set(small_ledger, small_ledger.end)[LabelScope.account()]
    again = F.assemble(small_ledger, samples, F.load_meta())
    assert np.array_equal(again.values, train_matrix.values)
    assert F.state_hash(again.encoder_state) == F.state_hash(train_matrix.encoder_state)


def test_matrix_is_finite(train_matrix):
    assert np.isfinite(train_matrix.values).all()
    assert train_matrix.columns == tuple(m.original_name for m in F.load_meta())


def test_yoy_column_within_caps(train_matrix):
    j = train_matrix.columns.index("yoy_bookings_growth")
    lo, hi = train_matrix.encoder_state["params"]["yoy_bookings_growth"]["caps"]
    col = train_matrix.values[:, j]
    assert col.min() >= lo and col.max() <= hi


def test_transform_leaves_state_untouched(small_ledger, train_matrix):
    before = F.state_hash(train_matrix.encoder_state)
    keys = [F.RowKey(a.id, LabelScope.account(), small_ledger.end) for a in small_ledger.accounts]
    held = F.assemble(small_ledger, keys, F.load_meta(), train_matrix.encoder_state)
    assert F.state_hash(train_matrix.encoder_state) == before == F.state_hash(held.encoder_state)
    assert np.isfinite(held.values).all()


def test_encoded_categoricals_within_target_range(train_matrix):
    y = train_matrix.targets
    for name in ("region", "segment", "size_band", "industry"):
        col = train_matrix.values[:, train_matrix.columns.index(name)]
        assert col.min() >= y.min() and col.max() <= y.max()


def test_unknown_feature_in_meta(tmp_path):
    p = tmp_path / "meta.csv"
    p.write_text("original_name,super_feature,ultra_feature,category,insight_type\nmystery,a,b,c,level\n")
    with pytest.raises(ConfigurationError):
        F.load_meta(p)


def test_meta_references_known_templates():
    from bookrank.narrator import load_templates

    F.load_meta(templates=load_templates())


def test_features_round_trip(tmp_path, train_matrix):
    p = tmp_path / "f.csv"
    F.write_features(train_matrix, p, preamble="# provenance {}\n")
    keys, cols, values = F.read_features(p)
    assert keys == train_matrix.keys
    assert tuple(cols) == train_matrix.columns
    assert np.array_equal(values, train_matrix.values)
