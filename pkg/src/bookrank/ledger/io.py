"""JSON-lines ledger files.

One record per line, discriminated by ``"type"``. Core entities are
``product``, ``rep``, ``account``, ``event`` and ``outcome``; a ledger may
also carry ``meta`` (simulation window), ``signal`` (monthly telemetry) and
``truth`` (synthetic ground truth) lines. ``provenance`` lines are skipped.
"""
from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from typing import Any, Iterable

from ..errors import IntegrityError, ParseError
from .model import (
    SIGNAL_METRICS,
    Account,
    AccountTruth,
    EventKind,
    GroundTruth,
    Ledger,
    Outcome,
    Product,
    QuantityEvent,
    Rep,
    RepTruth,
    SignalSeries,
    TreatmentEffectConfig,
)

_MISSING = object()


class _Record:
    def __init__(self, data: dict, line: int):
        self.data = data
        self.line = line

    def get(self, name, kind, default=_MISSING):
        if name not in self.data:
            if default is not _MISSING:
                return default
            raise ParseError(self.line, name, "missing")
        v = self.data[name]
        try:
            if kind is int:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise TypeError
                return v
            if kind is float:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise TypeError
                return float(v)
            if kind is str:
                if not isinstance(v, str):
                    raise TypeError
                return v
            if kind is date:
                return date.fromisoformat(v)
            if kind is dict:
                if not isinstance(v, dict):
                    raise TypeError
                return v
            if kind is list:
                if not isinstance(v, list):
                    raise TypeError
                return v
        except (TypeError, ValueError):
            raise ParseError(self.line, name, f"expected {kind.__name__}, got {v!r}") from None
        raise AssertionError(kind)

    def int_map(self, name):
        raw = self.get(name, dict, {})
        out = {}
        for k, v in raw.items():
            if isinstance(v, bool) or not isinstance(v, int):
                raise ParseError(self.line, f"{name}.{k}", f"expected int, got {v!r}")
            out[k] = v
        return out


def _parse(rec: _Record, parts: dict) -> None:
    t = rec.get("type", str)
    if t == "product":
        parts["products"].append(Product(rec.get("id", str), rec.get("name", str), rec.get("unit_price", int)))
    elif t == "rep":
        parts["reps"].append(
            Rep(rec.get("id", str), rec.get("region", str), rec.get("segment", str), rec.get("tenure_months", int))
        )
    elif t == "account":
        parts["accounts"].append(
            Account(
                id=rec.get("id", str),
                rep_id=rec.get("rep_id", str),
                region=rec.get("region", str),
                segment=rec.get("segment", str),
                size_band=rec.get("size_band", str),
                base_spend=rec.get("base_spend", int),
                renewal_anchor=rec.get("renewal_anchor", date),
                renewal_target=rec.get("renewal_target", int),
                industry=rec.get("industry", str, "unknown"),
                baseline_quantities=rec.int_map("baseline_quantities"),
            )
        )
    elif t == "event":
        kind = rec.get("kind", str)
        try:
            kind = EventKind(kind)
        except ValueError:
            raise ParseError(rec.line, "kind", f"unknown event kind {kind!r}") from None
        parts["events"].append(
            QuantityEvent(
                account_id=rec.get("account_id", str),
                contract_id=rec.get("contract_id", str),
                product_id=rec.get("product_id", str),
                at=rec.get("at", date),
                kind=kind,
                quantity_delta=rec.get("quantity_delta", int),
                spend_delta=rec.get("spend_delta", int),
            )
        )
    elif t == "outcome":
        pre = rec.get("pre_renewal_bookings", int, None) if rec.data.get("pre_renewal_bookings") is not None else None
        parts["outcomes"].append(
            Outcome(
                account_id=rec.get("account_id", str),
                renewal_bookings=rec.get("renewal_bookings", int),
                pre_renewal_bookings=pre,
                quantities=rec.int_map("quantities"),
            )
        )
    elif t == "signal":
        metrics = {}
        for name in SIGNAL_METRICS:
            values = rec.get(name, list)
            for v in values:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ParseError(rec.line, name, f"non-numeric value {v!r}")
            metrics[name] = tuple(values)
        parts["signals"].append(SignalSeries(rec.get("account_id", str), rec.get("start", date), metrics))
    elif t == "meta":
        parts["start"] = rec.get("start", date)
        parts["horizon_months"] = rec.get("horizon_months", int)
    elif t == "truth":
        scope = rec.get("scope", str)
        if scope == "ledger":
            eff = rec.get("effect", dict)
            try:
                parts["effect"] = TreatmentEffectConfig(**eff)
            except TypeError as exc:
                raise ParseError(rec.line, "effect", str(exc)) from None
        elif scope == "account":
            qd = rec.get("quantity_delta", dict, {})
            parts["acct_truth"].append(
                AccountTruth(
                    rec.get("account_id", str),
                    rec.get("growth_rate", float),
                    rec.get("true_delta", float),
                    {k: float(v) for k, v in qd.items()},
                )
            )
        elif scope == "rep":
            visits = rec.get("visits", list)
            parts["rep_truth"].append(RepTruth(rec.get("rep_id", str), rec.get("skill", float), tuple(visits)))
        else:
            raise ParseError(rec.line, "scope", f"unknown truth scope {scope!r}")
    elif t == "provenance":
        pass
    else:
        raise ParseError(rec.line, "type", f"unknown record type {t!r}")


def loads(lines: Iterable[str]) -> Ledger:
    parts: dict[str, Any] = {
        k: [] for k in ("products", "reps", "accounts", "events", "outcomes", "signals", "acct_truth", "rep_truth")
    }
    parts.update(start=None, horizon_months=None, effect=None)
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(n, "<record>", f"invalid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ParseError(n, "<record>", "expected a JSON object")
        _parse(_Record(data, n), parts)
    truth = None
    if parts["effect"] is not None or parts["acct_truth"] or parts["rep_truth"]:
        if parts["effect"] is None:
            raise IntegrityError("ground truth lines present without a ledger-scope truth record")
        truth = GroundTruth(
            parts["effect"],
            {t.account_id: t for t in parts["acct_truth"]},
            {t.rep_id: t for t in parts["rep_truth"]},
        )
    return Ledger(
        products=parts["products"],
        reps=parts["reps"],
        accounts=parts["accounts"],
        events=parts["events"],
        outcomes=parts["outcomes"],
        signals=parts["signals"],
        ground_truth=truth,
        start=parts["start"],
        horizon_months=parts["horizon_months"],
    )


def ingest(path) -> Ledger:
    with open(path, encoding="utf-8") as fh:
        return loads(fh)


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False)


def dumps_lines(ledger: Ledger, provenance: dict | None = None) -> list[str]:
    out = []
    if provenance is not None:
        out.append(_dump({"type": "provenance", **provenance}))
    if ledger.start is not None:
        out.append(_dump({"type": "meta", "start": ledger.start.isoformat(), "horizon_months": ledger.horizon_months}))
    for p in ledger.products:
        out.append(_dump({"type": "product", "id": p.id, "name": p.name, "unit_price": p.unit_price}))
    for r in ledger.reps:
        out.append(
            _dump({"type": "rep", "id": r.id, "region": r.region, "segment": r.segment, "tenure_months": r.tenure_months})
        )
    for a in ledger.accounts:
        out.append(
            _dump(
                {
                    "type": "account",
                    "id": a.id,
                    "rep_id": a.rep_id,
                    "region": a.region,
                    "segment": a.segment,
                    "size_band": a.size_band,
                    "base_spend": a.base_spend,
                    "renewal_anchor": a.renewal_anchor.isoformat(),
                    "renewal_target": a.renewal_target,
                    "industry": a.industry,
                    "baseline_quantities": dict(a.baseline_quantities),
                }
            )
        )
    for e in ledger.events:
        out.append(
            _dump(
                {
                    "type": "event",
                    "account_id": e.account_id,
                    "contract_id": e.contract_id,
                    "product_id": e.product_id,
                    "at": e.at.isoformat(),
                    "kind": e.kind.value,
                    "quantity_delta": e.quantity_delta,
                    "spend_delta": e.spend_delta,
                }
            )
        )
    for o in ledger.outcomes:
        rec = {"type": "outcome", "account_id": o.account_id, "renewal_bookings": o.renewal_bookings}
        if o.pre_renewal_bookings is not None:
            rec["pre_renewal_bookings"] = o.pre_renewal_bookings
        rec["quantities"] = dict(o.quantities)
        out.append(_dump(rec))
    for s in ledger.signals:
        rec = {"type": "signal", "account_id": s.account_id, "start": s.start.isoformat()}
        rec.update({k: list(v) for k, v in s.metrics.items()})
        out.append(_dump(rec))
    gt = ledger.ground_truth
    if gt is not None:
        eff = gt.effect
        out.append(_dump({"type": "truth", "scope": "ledger", "effect": dict(eff.__dict__)}))
        for t in gt.accounts.values():
            out.append(
                _dump(
                    {
                        "type": "truth",
                        "scope": "account",
                        "account_id": t.account_id,
                        "growth_rate": t.growth_rate,
                        "true_delta": t.true_delta,
                        "quantity_delta": dict(t.quantity_delta),
                    }
                )
            )
        for t in gt.reps.values():
            out.append(_dump({"type": "truth", "scope": "rep", "rep_id": t.rep_id, "skill": t.skill, "visits": list(t.visits)}))
    return out


def export(ledger: Ledger, path, provenance: dict | None = None) -> None:
    Path(path).write_text("".join(line + "\n" for line in dumps_lines(ledger, provenance)), encoding="utf-8")
