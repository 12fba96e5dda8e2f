import io
from datetime import date

import pytest
from hypothesis import given, settings, strategies as st

from bookrank.errors import ConfigurationError, IntegrityError, LookupFailure, ParseError
from bookrank.ledger import EventKind, Ledger, export, generate_synthetic, ingest, loads
from bookrank.ledger.io import dumps_lines

from builders import CYCLE, PRODUCTS, REP, account, case_ledger, event


def test_zero_reps_rejected():
    with pytest.raises(ConfigurationError):
        generate_synthetic(42, n_reps=0)


@pytest.mark.parametrize("kw", [{"accounts_per_rep_range": (0, 5)}, {"accounts_per_rep_range": (9, 3)}, {"horizon_months": 12}])
def test_invalid_ranges_rejected(kw):
    with pytest.raises(ConfigurationError):
        generate_synthetic(1, n_reps=2, **kw)


def test_same_seed_is_byte_identical():
    a = dumps_lines(generate_synthetic(7, n_reps=4))
    b = dumps_lines(generate_synthetic(7, n_reps=4))
    assert a == b
    assert a != dumps_lines(generate_synthetic(8, n_reps=4))


def test_account_counts_within_published_range():
    L = generate_synthetic(42, n_reps=100, accounts_per_rep_range=(5, 60))
    counts = [len(L.accounts_of(r.id)) for r in L.reps]
    assert min(counts) >= 5 and max(counts) <= 60


def test_generator_caps_at_sixty():
    L = generate_synthetic(3, n_reps=5, accounts_per_rep_range=(50, 500))
    assert max(len(L.accounts_of(r.id)) for r in L.reps) <= 60


def test_all_event_shapes_present(small_ledger):
    kinds = {e.kind for e in small_ledger.events}
    assert kinds == set(EventKind)


def test_ground_truth_populated(small_ledger):
    gt = small_ledger.ground_truth
    assert set(gt.accounts) == {a.id for a in small_ledger.accounts}
    assert set(gt.reps) == {r.id for r in small_ledger.reps}


def test_empty_file_gives_empty_ledger(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert len(ingest(p).accounts) == 0


def test_round_trip(tmp_path, small_ledger):
    p = tmp_path / "ledger.jsonl"
    export(small_ledger, p, provenance={"note": "x"})
    assert ingest(p) == small_ledger


def test_event_for_unknown_account_is_integrity_error():
    with pytest.raises(IntegrityError):
        Ledger(PRODUCTS, [REP], [account("A")], [event("GHOST", "C1", "JOBS", CYCLE, EventKind.RENEWAL, 1)])


def test_dangling_reference_in_file():
    lines = [
        '{"type":"product","id":"JOBS","name":"Jobs","unit_price":1}',
        '{"type":"event","account_id":"X","contract_id":"C","product_id":"JOBS","at":"2022-01-01",'
        '"kind":"renewal","quantity_delta":1,"spend_delta":1}',
    ]
    with pytest.raises(IntegrityError):
        loads(lines)


def test_parse_error_names_line_and_field():
    lines = ['{"type":"product","id":"P","name":"n","unit_price":1}', '{"type":"rep","id":"R","region":"AMER","segment":"SMB","tenure_months":"ten"}']
    with pytest.raises(ParseError) as exc:
        loads(lines)
    assert exc.value.line == 2 and exc.value.field == "tenure_months"


def test_replay_without_events_is_baseline():
    L = Ledger(PRODUCTS, [REP], [account("A", quantities={"JOBS": 5})], [])
    assert L.replay_quantities("A", "JOBS", date(2030, 1, 1)) == 5


def test_replay_case3_adds_four_jobs():
    L = case_ledger(cases=(3,))
    assert L.replay_quantities("CASE3-0", "JOBS", date(2024, 1, 1)) == 5 + 4


def test_replay_cancellation():
    events = [event("A", "C1", "JOBS", CYCLE, EventKind.RENEWAL, 1), event("A", "C1", "JOBS", date(2022, 3, 1), EventKind.ADD_ON, -1)]
    L = Ledger(PRODUCTS, [REP], [account("A")], events)
    assert L.replay_quantities("A", "JOBS", date(2022, 12, 31)) == 5


def test_replay_unknown_ids():
    L = case_ledger(cases=(1,))
    with pytest.raises(LookupFailure):
        L.replay_quantities("nope", "JOBS", CYCLE)
    with pytest.raises(LookupFailure):
        L.replay_quantities("CASE1-0", "nope", CYCLE)


def test_negative_replay_rejected():
    with pytest.raises(IntegrityError):
        Ledger(PRODUCTS, [REP], [account("A", quantities={"JOBS": 1})], [event("A", "C1", "JOBS", CYCLE, EventKind.RENEWAL, -2)])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_replay_never_negative(seed):
    L = generate_synthetic(seed, n_reps=2, accounts_per_rep_range=(5, 8))
    for e in L.events:
        assert L.replay_quantities(e.account_id, e.product_id, e.at) >= 0


def test_export_to_stream_is_stable(small_ledger):
    buf = io.StringIO("".join(line + "\n" for line in dumps_lines(small_ledger)))
    assert loads(buf) == small_ledger
