from datetime import date

import pytest

from bookrank.errors import NoCycleError
from bookrank.labeler import (
    LabelScope,
    ScopeKind,
    account_cycles,
    build_samples,
    build_training_set,
    cycle_events,
    read_labels,
    window_boundaries,
    write_labels,
)
from bookrank.ledger import Ledger, add_months

from builders import CYCLE, PRODUCTS, REP, account, case_ledger, customer1_ledger

JOBS = LabelScope.product("JOBS")
AS_OF = date(2023, 12, 31)  # after the non-co-term renewal, before the next flat window closes


@pytest.mark.parametrize("case,n", [(1, 1), (2, 2), (3, 4)])
def test_case_boundaries(case, n):
    L = case_ledger(cases=(case,))
    assert len(window_boundaries(L, f"CASE{case}-0", CYCLE)) == n


@pytest.mark.parametrize("case,targets", [(1, [1]), (2, [1, 2]), (3, [1, 2, 3, 4])])
def test_case_cumulative_targets(case, targets):
    L = case_ledger(cases=(case,))
    samples = build_samples(L, f"CASE{case}-0", CYCLE, JOBS)
    assert [s.target for s in samples] == targets
    assert all(isinstance(s.target, int) for s in samples)


def test_case3_last_sample_matches_replay():
    L = case_ledger(cases=(3,))
    samples = build_samples(L, "CASE3-0", CYCLE, JOBS)
    end = samples[-1].observed_at
    assert samples[-1].target == L.replay_quantities("CASE3-0", "JOBS", end) - 5


def test_customer1_netting():
    L = customer1_ledger()
    acct = build_samples(L, "CUST1", CYCLE, LabelScope.account())
    assert len(acct) == 1
    # +1 Recruiter ($8,000) is outweighed by -2 Jobs (2 x $5,000)
    assert acct[0].target == 800_000 - 2 * 500_000 < 0
    rec = build_samples(L, "CUST1", CYCLE, LabelScope.product("REC"))
    jobs = build_samples(L, "CUST1", CYCLE, JOBS)
    assert [s.target for s in rec] == [1]
    assert [s.target for s in jobs] == [-2]


def test_flat_account_single_zero_sample():
    L = Ledger(PRODUCTS, [REP], [account("FLAT")], [])
    samples = build_samples(L, "FLAT", CYCLE, LabelScope.account())
    assert len(samples) == 1
    assert samples[0].target == 0
    assert samples[0].observed_at == add_months(CYCLE, 12)


def test_off_cadence_cycle_is_error():
    L = case_ledger(cases=(1,))
    with pytest.raises(NoCycleError):
        window_boundaries(L, "CASE1-0", date(2022, 3, 1))


def test_training_set_case_counts():
    ts = build_training_set(case_ledger(), AS_OF, lookback_months=24)
    assert len(ts[JOBS]) == 1 + 2 + 4


def test_as_of_before_every_renewal_is_empty():
    assert build_training_set(case_ledger(), date(2021, 6, 1)) == {}


def test_empty_ledger_is_empty_set():
    assert build_training_set(Ledger(), AS_OF) == {}


def test_doubling_ledger_doubles_samples():
    one = build_training_set(case_ledger(copies=1), AS_OF)
    two = build_training_set(case_ledger(copies=2), AS_OF)
    assert one.keys() == two.keys()
    for scope in one:
        assert len(two[scope]) == 2 * len(one[scope])


def test_no_leakage_on_synthetic(small_ledger):
    as_of = small_ledger.end
    for scope, samples in build_training_set(small_ledger, as_of).items():
        for s in samples:
            assert s.feature_snapshot_at <= s.baseline_at < s.observed_at <= as_of
            if scope.kind is ScopeKind.PRODUCT_QUANTITY:
                assert isinstance(s.target, int)


def test_cumulativity_on_synthetic(small_ledger):
    """Sample targets are prefix sums of the cycle's per-date deltas."""
    checked = 0
    for acct in small_ledger.accounts:
        for start in account_cycles(small_ledger, acct.id, small_ledger.end):
            events = cycle_events(small_ledger, acct.id, start)
            for scope in [LabelScope.account()] + [LabelScope.product(p.id) for p in small_ledger.products]:
                mine = [e for e in events if scope.product_id in (None, e.product_id)]
                samples = build_samples(small_ledger, acct.id, start, scope)
                if not mine:
                    assert [s.target for s in samples] == [0]
                    continue
                by_date = {}
                for e in mine:
                    by_date[e.at] = by_date.get(e.at, 0) + (e.quantity_delta if scope.product_id else e.spend_delta)
                running, expect = 0, []
                for d in sorted(by_date):
                    running += by_date[d]
                    expect.append(running)
                assert [s.target for s in samples] == expect
                checked += 1
    assert checked > 20


def test_labels_round_trip(tmp_path):
    ts = build_training_set(case_ledger(), AS_OF)
    p = tmp_path / "labels.csv"
    write_labels(ts, p, preamble="# provenance {}\n")
    back = read_labels(p)
    assert {k: [(s.account_id, s.observed_at, s.target) for s in v] for k, v in back.items()} == {
        k: [(s.account_id, s.observed_at, s.target) for s in v] for k, v in ts.items()
    }
