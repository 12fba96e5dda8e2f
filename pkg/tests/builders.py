"""Small hand-built ledgers shared by the tests."""
from __future__ import annotations

from datetime import date

from bookrank.ledger import Account, EventKind, Ledger, Product, QuantityEvent, Rep

RECRUITER = Product("REC", "Recruiter", 800_000)  # $8,000 per seat
JOBS = Product("JOBS", "Jobs", 500_000)  # $5,000 per slot
PRODUCTS = (RECRUITER, JOBS)
PRICE = {p.id: p.unit_price for p in PRODUCTS}

CYCLE = date(2022, 1, 1)
REP = Rep("R1", "AMER", "MID", 24)


def account(aid: str, rep: str = "R1", anchor: date = CYCLE, quantities=None, **kw) -> Account:
    quantities = dict(quantities or {"JOBS": 5})
    spend = sum(PRICE[p] * q for p, q in quantities.items())
    fields = dict(region="AMER", segment="MID", size_band="medium", base_spend=spend, renewal_anchor=anchor,
                  renewal_target=int(spend * 1.03), baseline_quantities=quantities)
    fields.update(kw)
    return Account(aid, rep, **fields)


def event(aid: str, contract: str, product: str, at: date, kind: EventKind, qty: int) -> QuantityEvent:
    return QuantityEvent(aid, contract, product, at, kind, qty, qty * PRICE[product])


def case_events(case: int, aid: str) -> list[QuantityEvent]:
    """Jobs upsell timelines: renewal, then a co-term add-on, then a non-co-term chain."""
    out = [event(aid, "C1", "JOBS", CYCLE, EventKind.RENEWAL, 1)]
    if case >= 2:
        out.append(event(aid, "C1", "JOBS", date(2022, 4, 1), EventKind.ADD_ON, 1))
    if case >= 3:
        out.append(event(aid, "C2", "JOBS", date(2022, 7, 1), EventKind.ADD_ON_NON_CO_TERM, 1))
        out.append(event(aid, "C2", "JOBS", date(2023, 7, 1), EventKind.NON_CO_TERM_RENEWAL, 1))
    return out


def case_ledger(cases=(1, 2, 3), copies: int = 1) -> Ledger:
    accounts, events = [], []
    for k in range(copies):
        for c in cases:
            aid = f"CASE{c}-{k}"
            accounts.append(account(aid))
            events.extend(case_events(c, aid))
    return Ledger(PRODUCTS, [REP], accounts, events)


def customer1_ledger() -> Ledger:
    """Three contracts: one untouched, +1 Recruiter on the second, -2 Jobs on the third."""
    a = account("CUST1", quantities={"REC": 3, "JOBS": 6})
    events = [
        event("CUST1", "C1", "REC", CYCLE, EventKind.RENEWAL, 0),
        event("CUST1", "C2", "REC", CYCLE, EventKind.RENEWAL, 1),
        event("CUST1", "C3", "JOBS", CYCLE, EventKind.RENEWAL, -2),
    ]
    return Ledger(PRODUCTS, [REP], [a], events)
