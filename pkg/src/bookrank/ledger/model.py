"""Domain types for the sales ledger.

Money is always integer cents. Dates are ``datetime.date``. Every type is
frozen; a :class:`Ledger` is immutable once validated.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from types import MappingProxyType
from typing import Mapping

from ..errors import IntegrityError, LookupFailure

REGIONS = ("AMER", "EMEA", "APAC")
SEGMENTS = ("SMB", "MID", "ENT")
SIZE_BANDS = ("small", "medium", "large")

# monthly account telemetry carried by signal records
SIGNAL_METRICS = (
    "seats_purchased",
    "seats_active",
    "messages_sent",
    "messages_accepted",
    "jobs_posted",
    "job_views",
    "hires",
    "headcount_growth",
    "macro_index",
)


class EventKind(str, Enum):
    RENEWAL = "renewal"
    ADD_ON = "add_on"
    ADD_ON_NON_CO_TERM = "add_on_non_co_term"
    NON_CO_TERM_RENEWAL = "non_co_term_renewal"


def add_months(d: date, months: int) -> date:
    """Shift ``d`` by whole months, clamping the day to the target month."""
    y, m = divmod(d.month - 1 + months, 12)
    year = d.year + y
    month = m + 1
    for day in (d.day, 30, 29, 28):
        try:
            return date(year, month, day)
        except ValueError:
            continue
    raise AssertionError("unreachable")


def month_index(start: date, d: date) -> int:
    return (d.year - start.year) * 12 + (d.month - start.month)


def day_before(d: date) -> date:
    return d - timedelta(days=1)


@dataclass(frozen=True)
class Product:
    id: str
    name: str
    unit_price: int


@dataclass(frozen=True)
class Rep:
    id: str
    region: str
    segment: str
    tenure_months: int


@dataclass(frozen=True)
class Account:
    id: str
    rep_id: str
    region: str
    segment: str
    size_band: str
    base_spend: int
    renewal_anchor: date
    renewal_target: int
    industry: str = "unknown"
    # quantity held per product before the first event is replayed
    baseline_quantities: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "baseline_quantities", MappingProxyType(dict(sorted(self.baseline_quantities.items())))
        )

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class QuantityEvent:
    account_id: str
    contract_id: str
    product_id: str
    at: date
    kind: EventKind
    quantity_delta: int
    spend_delta: int

    def sort_key(self):
        return (self.account_id, self.at, self.contract_id, self.product_id, self.kind.value)


@dataclass(frozen=True)
class Outcome:
    account_id: str
    renewal_bookings: int
    pre_renewal_bookings: int | None = None
    quantities: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "quantities", MappingProxyType(dict(sorted(self.quantities.items()))))

    def __hash__(self):
        return hash(self.account_id)


@dataclass(frozen=True)
class SignalSeries:
    """Monthly telemetry for one account, one value per month from ``start``."""

    account_id: str
    start: date
    metrics: Mapping[str, tuple]

    def __post_init__(self):
        object.__setattr__(
            self, "metrics", MappingProxyType({k: tuple(v) for k, v in sorted(self.metrics.items())})
        )

    def __hash__(self):
        return hash(self.account_id)

    @property
    def n_months(self) -> int:
        return min((len(v) for v in self.metrics.values()), default=0)

    def at(self, as_of: date) -> dict | None:
        """Latest monthly snapshot whose month starts on or before ``as_of``."""
        i = month_index(self.start, as_of)
        if as_of < self.start or i < 0:
            return None
        i = min(i, self.n_months - 1)
        if i < 0:
            return None
        return {k: v[i] for k, v in self.metrics.items()}


@dataclass(frozen=True)
class TreatmentEffectConfig:
    """Planted effects used by the synthetic generator."""

    ab_lift: float = 0.08
    mau_lift: float = 0.20
    # rep skill shifts both adoption propensity and renewal performance
    skill_outcome_effect: float = 0.25
    skill_adoption_slope: float = 2.0
    non_user_rate: float = 0.15
    ratio_noise: float = 0.25


@dataclass(frozen=True)
class AccountTruth:
    account_id: str
    growth_rate: float
    # expected (noise-free) spend delta for the cycle following the horizon
    true_delta: float
    quantity_delta: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "quantity_delta", MappingProxyType(dict(sorted(self.quantity_delta.items()))))

    def __hash__(self):
        return hash(self.account_id)


@dataclass(frozen=True)
class RepTruth:
    rep_id: str
    skill: float
    visits: tuple


@dataclass(frozen=True)
class GroundTruth:
    effect: TreatmentEffectConfig
    accounts: Mapping[str, AccountTruth]
    reps: Mapping[str, RepTruth]

    def __post_init__(self):
        object.__setattr__(self, "accounts", MappingProxyType(dict(sorted(self.accounts.items()))))
        object.__setattr__(self, "reps", MappingProxyType(dict(sorted(self.reps.items()))))

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (self.effect, dict(self.accounts), dict(self.reps)) == (
            other.effect,
            dict(other.accounts),
            dict(other.reps),
        )

    __hash__ = None


class Ledger:
    """Validated, read-only view over products, reps, accounts and events."""

    def __init__(
        self,
        products=(),
        reps=(),
        accounts=(),
        events=(),
        outcomes=(),
        signals=(),
        ground_truth: GroundTruth | None = None,
        start: date | None = None,
        horizon_months: int | None = None,
    ):
        self.products = tuple(sorted(products, key=lambda p: p.id))
        self.reps = tuple(sorted(reps, key=lambda r: r.id))
        self.accounts = tuple(sorted(accounts, key=lambda a: a.id))
        self.events = tuple(sorted(events, key=QuantityEvent.sort_key))
        self.outcomes = tuple(sorted(outcomes, key=lambda o: o.account_id))
        self.signals = tuple(sorted(signals, key=lambda s: s.account_id))
        self.ground_truth = ground_truth
        self.start = start
        self.horizon_months = horizon_months

        self._products = {p.id: p for p in self.products}
        self._reps = {r.id: r for r in self.reps}
        self._accounts = {a.id: a for a in self.accounts}
        self._outcomes = {o.account_id: o for o in self.outcomes}
        self._signals = {s.account_id: s for s in self.signals}
        self._events_by_account: dict[str, tuple] = {}
        for e in self.events:
            self._events_by_account.setdefault(e.account_id, []).append(e)
        self._events_by_account = {k: tuple(v) for k, v in self._events_by_account.items()}
        self.validate()

    # -- lookups -----------------------------------------------------------
    def product(self, product_id: str) -> Product:
        try:
            return self._products[product_id]
        except KeyError:
            raise LookupFailure(f"unknown product {product_id!r}") from None

    def rep(self, rep_id: str) -> Rep:
        try:
            return self._reps[rep_id]
        except KeyError:
            raise LookupFailure(f"unknown rep {rep_id!r}") from None

    def account(self, account_id: str) -> Account:
        try:
            return self._accounts[account_id]
        except KeyError:
            raise LookupFailure(f"unknown account {account_id!r}") from None

    def outcome(self, account_id: str) -> Outcome | None:
        return self._outcomes.get(account_id)

    def signal(self, account_id: str) -> SignalSeries | None:
        return self._signals.get(account_id)

    def events_for(self, account_id: str) -> tuple:
        self.account(account_id)
        return self._events_by_account.get(account_id, ())

    def accounts_of(self, rep_id: str) -> list[Account]:
        return [a for a in self.accounts if a.rep_id == rep_id]

    @property
    def end(self) -> date | None:
        if self.start is None or self.horizon_months is None:
            return None
        return add_months(self.start, self.horizon_months)

    # -- derived quantities ------------------------------------------------
    def replay_quantities(self, account_id: str, product_id: str, as_of: date) -> int:
        """Quantity of ``product_id`` held by the account at the end of ``as_of``."""
        acct = self.account(account_id)
        self.product(product_id)
        qty = acct.baseline_quantities.get(product_id, 0)
        for e in self._events_by_account.get(account_id, ()):
            if e.at > as_of:
                break
            if e.product_id == product_id:
                qty += e.quantity_delta
        return qty

    def spend_at(self, account_id: str, as_of: date) -> int:
        """Annualised contract spend (cents) after replaying events up to ``as_of``."""
        acct = self.account(account_id)
        spend = acct.base_spend
        events = self._events_by_account.get(account_id, ())
        keys = [e.at for e in events]
        for e in events[: bisect.bisect_right(keys, as_of)]:
            spend += e.spend_delta
        return spend

    def held_products(self, account_id: str, as_of: date) -> list[str]:
        acct = self.account(account_id)
        ids = set(acct.baseline_quantities) | {e.product_id for e in self.events_for(account_id)}
        return sorted(p for p in ids if self.replay_quantities(account_id, p, as_of) > 0)

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        for label, items, key in (
            ("product", self.products, "id"),
            ("rep", self.reps, "id"),
            ("account", self.accounts, "id"),
            ("outcome", self.outcomes, "account_id"),
            ("signal", self.signals, "account_id"),
        ):
            ids = [getattr(x, key) for x in items]
            if len(ids) != len(set(ids)):
                raise IntegrityError(f"duplicate {label} id")
        for p in self.products:
            if p.unit_price < 0:
                raise IntegrityError(f"product {p.id}: negative unit_price")
        for a in self.accounts:
            if a.rep_id not in self._reps:
                raise IntegrityError(f"account {a.id}: unknown rep {a.rep_id!r}")
            if a.base_spend <= 0:
                raise IntegrityError(f"account {a.id}: base_spend must be > 0")
            if a.renewal_target <= 0:
                raise IntegrityError(f"account {a.id}: renewal_target must be > 0")
            for pid, q in a.baseline_quantities.items():
                if pid not in self._products:
                    raise IntegrityError(f"account {a.id}: unknown product {pid!r}")
                if q < 0:
                    raise IntegrityError(f"account {a.id}: negative baseline quantity")
        end = self.end
        chains: set[tuple[str, str]] = set()
        running: dict[tuple[str, str], int] = {}
        for e in self.events:
            if e.account_id not in self._accounts:
                raise IntegrityError(f"event references unknown account {e.account_id!r}")
            if e.product_id not in self._products:
                raise IntegrityError(f"event references unknown product {e.product_id!r}")
            if self.start is not None and (e.at < self.start or (end is not None and e.at >= end)):
                raise IntegrityError(f"event for {e.account_id} at {e.at} outside horizon")
            if e.kind is EventKind.ADD_ON_NON_CO_TERM:
                chains.add((e.account_id, e.contract_id))
            elif e.kind is EventKind.NON_CO_TERM_RENEWAL and (e.account_id, e.contract_id) not in chains:
                raise IntegrityError(
                    f"non_co_term_renewal for {e.account_id} contract {e.contract_id} has no originating add-on"
                )
            k = (e.account_id, e.product_id)
            if k not in running:
                running[k] = self._accounts[e.account_id].baseline_quantities.get(e.product_id, 0)
            running[k] += e.quantity_delta
            if running[k] < 0:
                raise IntegrityError(f"quantity of {e.product_id} for {e.account_id} goes negative at {e.at}")
        for o in self.outcomes:
            if o.account_id not in self._accounts:
                raise IntegrityError(f"outcome references unknown account {o.account_id!r}")
        for s in self.signals:
            if s.account_id not in self._accounts:
                raise IntegrityError(f"signal references unknown account {s.account_id!r}")
        gt = self.ground_truth
        if gt is not None:
            for aid in gt.accounts:
                if aid not in self._accounts:
                    raise IntegrityError(f"ground truth references unknown account {aid!r}")
            for rid in gt.reps:
                if rid not in self._reps:
                    raise IntegrityError(f"ground truth references unknown rep {rid!r}")

    def __eq__(self, other):
        if not isinstance(other, Ledger):
            return NotImplemented
        return (
            self.products == other.products
            and self.reps == other.reps
            and self.accounts == other.accounts
            and self.events == other.events
            and self.outcomes == other.outcomes
            and self.signals == other.signals
            and self.ground_truth == other.ground_truth
            and self.start == other.start
            and self.horizon_months == other.horizon_months
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Ledger(products={len(self.products)}, reps={len(self.reps)}, "
            f"accounts={len(self.accounts)}, events={len(self.events)})"
        )


def replay_quantities(ledger: Ledger, account_id: str, product_id: str, as_of: date) -> int:
    return ledger.replay_quantities(account_id, product_id, as_of)
