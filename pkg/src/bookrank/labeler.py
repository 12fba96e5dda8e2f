"""Upsell/churn labels over overlapping windows of the renewal cycle.

A cycle starts at a renewal date on the account's 12-month cadence. It owns
the renewal itself, every add-on and non-co-term add-on dated inside the
cycle, and the renewals of non-co-term chains that started inside it (those
fall after the next regular renewal). Each distinct event date is one
window boundary; sample *k* carries the cumulative delta from the pre-cycle
baseline through boundary *k*.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from enum import Enum
from itertools import groupby
from pathlib import Path

from .errors import NoCycleError, ValidationError
from .ledger.model import EventKind, Ledger, QuantityEvent, add_months, day_before, month_index

CYCLE_MONTHS = 12


class ScopeKind(str, Enum):
    ACCOUNT_SPEND = "account_spend"
    PRODUCT_QUANTITY = "product_quantity"


@dataclass(frozen=True, order=True)
class LabelScope:
    kind: ScopeKind
    product_id: str | None = None

    def __post_init__(self):
        kind = ScopeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if (kind is ScopeKind.PRODUCT_QUANTITY) != (self.product_id is not None):
            raise ValidationError("product_id is required exactly for product_quantity scope")

    @classmethod
    def account(cls) -> "LabelScope":
        return cls(ScopeKind.ACCOUNT_SPEND)

    @classmethod
    def product(cls, product_id: str) -> "LabelScope":
        return cls(ScopeKind.PRODUCT_QUANTITY, product_id)

    @property
    def key(self) -> str:
        return "account" if self.product_id is None else f"product_{self.product_id}"

    def __str__(self):
        return self.key


@dataclass(frozen=True)
class LabelSample:
    account_id: str
    scope: LabelScope
    baseline_at: date
    observed_at: date
    target: float
    feature_snapshot_at: date

    def __post_init__(self):
        if not self.baseline_at < self.observed_at:
            raise ValidationError("baseline_at must precede observed_at")
        if self.feature_snapshot_at > self.baseline_at:
            raise ValidationError("feature snapshot must not follow the baseline")
        if self.target != self.target or self.target in (float("inf"), float("-inf")):
            raise ValidationError("target must be finite")


def _on_cadence(ledger: Ledger, account_id: str, cycle_start: date) -> bool:
    anchor = ledger.account(account_id).renewal_anchor
    months = month_index(anchor, cycle_start)
    return months >= 0 and months % CYCLE_MONTHS == 0 and add_months(anchor, months) == cycle_start


def _cycle_of(anchor: date, at: date) -> date:
    months = month_index(anchor, at)
    k = months // CYCLE_MONTHS
    start = add_months(anchor, k * CYCLE_MONTHS)
    if start > at:
        start = add_months(anchor, (k - 1) * CYCLE_MONTHS)
    return start


def cycle_events(ledger: Ledger, account_id: str, cycle_start: date) -> list[QuantityEvent]:
    """Events attributed to the cycle beginning at ``cycle_start``."""
    if not _on_cadence(ledger, account_id, cycle_start):
        raise NoCycleError(f"{cycle_start} is not a renewal date of account {account_id}")
    anchor = ledger.account(account_id).renewal_anchor
    cycle_end = add_months(cycle_start, CYCLE_MONTHS)
    events = ledger.events_for(account_id)
    chains = {
        e.contract_id
        for e in events
        if e.kind is EventKind.ADD_ON_NON_CO_TERM and cycle_start <= e.at < cycle_end
    }
    out = []
    for e in events:
        if e.kind is EventKind.NON_CO_TERM_RENEWAL:
            if e.contract_id in chains:
                out.append(e)
        elif e.at >= anchor and _cycle_of(anchor, e.at) == cycle_start:
            out.append(e)
    return out


def _filter(events, scope: LabelScope):
    if scope.kind is ScopeKind.PRODUCT_QUANTITY:
        return [e for e in events if e.product_id == scope.product_id]
    return list(events)


def window_boundaries(ledger: Ledger, account_id: str, cycle_start: date, scope: LabelScope | None = None) -> list[date]:
    """Ordered distinct event dates of the cycle; stacked contracts share a boundary."""
    events = _filter(cycle_events(ledger, account_id, cycle_start), scope or LabelScope.account())
    return sorted({e.at for e in events})


def build_samples(ledger: Ledger, account_id: str, cycle_start: date, scope: LabelScope) -> list[LabelSample]:
    events = _filter(cycle_events(ledger, account_id, cycle_start), scope)
    baseline_at = day_before(cycle_start)
    spend = scope.kind is ScopeKind.ACCOUNT_SPEND
    if not events:
        # flat cycle: cs == ps
        return [LabelSample(account_id, scope, baseline_at, add_months(cycle_start, CYCLE_MONTHS), 0, baseline_at)]
    samples, running = [], 0
    for at, group in groupby(sorted(events, key=lambda e: e.at), key=lambda e: e.at):
        running += sum(e.spend_delta if spend else e.quantity_delta for e in group)
        samples.append(LabelSample(account_id, scope, baseline_at, at, running, baseline_at))
    return samples


def account_cycles(ledger: Ledger, account_id: str, until: date) -> list[date]:
    anchor = ledger.account(account_id).renewal_anchor
    out, k = [], 0
    while True:
        start = add_months(anchor, k * CYCLE_MONTHS)
        if start >= until:
            return out
        out.append(start)
        k += 1


def scopes_for_cycle(ledger: Ledger, account_id: str, cycle_start: date) -> list[LabelScope]:
    held = set(ledger.held_products(account_id, day_before(cycle_start)))
    held |= {e.product_id for e in cycle_events(ledger, account_id, cycle_start)}
    return [LabelScope.account()] + [LabelScope.product(p) for p in sorted(held)]


def build_training_set(ledger: Ledger, as_of: date, lookback_months: int = 24) -> dict[LabelScope, list[LabelSample]]:
    """All samples of cycles starting within the lookback whose windows end by ``as_of``."""
    if lookback_months < CYCLE_MONTHS:
        raise ValidationError("lookback must cover at least one renewal cycle")
    earliest = add_months(as_of, -lookback_months)
    out: dict[LabelScope, list[LabelSample]] = {}
    for acct in ledger.accounts:
        for cycle_start in account_cycles(ledger, acct.id, as_of):
            if cycle_start < earliest:
                continue
            for scope in scopes_for_cycle(ledger, acct.id, cycle_start):
                for s in build_samples(ledger, acct.id, cycle_start, scope):
                    if s.observed_at <= as_of:
                        out.setdefault(scope, []).append(s)
    return dict(sorted(out.items()))


LABEL_COLUMNS = ("account_id", "scope", "product_id", "baseline_at", "observed_at", "target")


def write_labels(samples_by_scope: dict[LabelScope, list[LabelSample]], path, preamble: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(preamble)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for scope, samples in samples_by_scope.items():
            for s in samples:
                w.writerow(
                    [s.account_id, scope.kind.value, scope.product_id or "", s.baseline_at.isoformat(), s.observed_at.isoformat(), s.target]
                )


def read_labels(path) -> dict[LabelScope, list[LabelSample]]:
    out: dict[LabelScope, list[LabelSample]] = {}
    text = Path(path).read_text(encoding="utf-8").splitlines()
    rows = csv.DictReader(line for line in text if not line.startswith("#"))
    for row in rows:
        scope = LabelScope(ScopeKind(row["scope"]), row["product_id"] or None)
        baseline = date.fromisoformat(row["baseline_at"])
        target = float(row["target"])
        if target.is_integer():
            target = int(target)
        out.setdefault(scope, []).append(
            LabelSample(row["account_id"], scope, baseline, date.fromisoformat(row["observed_at"]), target, baseline)
        )
    return dict(sorted(out.items()))
