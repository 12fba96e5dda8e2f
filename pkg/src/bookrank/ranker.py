"""Score normalisation, per-rep books and the 2x2 spend/score segmentation."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LookupFailure, ValidationError
from .labeler import LabelScope, ScopeKind

ACCOUNT_RANGE = 100.0
PRODUCT_RANGE = 10_000.0


def score_range(scope: LabelScope) -> float:
    return ACCOUNT_RANGE if scope.kind is ScopeKind.ACCOUNT_SPEND else PRODUCT_RANGE


@dataclass(frozen=True)
class AccountScore:
    account_id: str
    raw_delta: float
    normalized: float
    scope: LabelScope
    batch_id: str


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    v = sorted(values)
    if not v:
        raise ValidationError("percentile of an empty batch")
    k = max(1, math.ceil(pct / 100.0 * len(v)))
    return v[k - 1]


def _batch_id(entries) -> str:
    h = hashlib.sha256()
    for aid, delta, base in entries:
        h.update(f"{aid}|{float(delta)!r}|{base!r};".encode())
    return h.hexdigest()[:12]


def normalize_batch(
    entries: Iterable[tuple[str, float, float]],
    R: float | None = None,
    scope: LabelScope | None = None,
    batch_id: str | None = None,
) -> list[AccountScore]:
    """Map raw deltas onto [-R, R] after dividing by ln(e + base_spend).

    The batch scale is the nearest-rank 99th percentile of |g|; if that is
    zero while some g is not, the largest |g| is used instead, and an
    all-zero batch uses 1.
    """
    entries = [(aid, float(d), b) for aid, d, b in entries]
    scope = scope or LabelScope.account()
    R = score_range(scope) if R is None else float(R)
    if not R > 0:
        raise ValidationError("score range must be positive")
    for aid, d, base in entries:
        if not base > 0:
            raise ValidationError(f"base_spend of {aid} must be positive")
        if not math.isfinite(d):
            raise ValidationError(f"raw delta of {aid} is not finite")
    bid = batch_id or _batch_id(entries)
    g = [d / math.log(math.e + base) for _, d, base in entries]
    mags = [abs(x) for x in g]
    if not mags or max(mags) == 0:
        S = 1.0
    else:
        S = nearest_rank(mags, 99) or max(mags)
    out = []
    for (aid, d, _), gi in zip(entries, g):
        z = R * gi / S
        out.append(AccountScore(aid, d, min(max(z, -R), R), scope, bid))
    return out


# -- quadrants ------------------------------------------------------------------------

class Quadrant(str, Enum):
    HIGH_SPEND_GROW = "high spend + high likelihood to grow"
    HIGH_SPEND_RISK = "high spend + high churn risk"
    LOW_SPEND_GROW = "low spend + high likelihood to grow"
    LOW_SPEND_RISK = "low spend + high churn risk"


def segment_2x2(
    scores: Mapping[str, float],
    renewal_targets: Mapping[str, float],
    score_threshold: float = 0.0,
    target_threshold: float | None = None,
) -> dict[str, Quadrant]:
    """Score on one axis, renewal target on the other; ties fall on the grow / high-spend side."""
    if target_threshold is None:
        target_threshold = float(np.median([renewal_targets[a] for a in scores])) if scores else 0.0
    if not (math.isfinite(score_threshold) and math.isfinite(target_threshold)):
        raise ValidationError("quadrant thresholds must be finite")
    out = {}
    for aid, s in scores.items():
        high = renewal_targets[aid] >= target_threshold
        grow = s >= score_threshold
        if high:
            out[aid] = Quadrant.HIGH_SPEND_GROW if grow else Quadrant.HIGH_SPEND_RISK
        else:
            out[aid] = Quadrant.LOW_SPEND_GROW if grow else Quadrant.LOW_SPEND_RISK
    return out


# -- books -------------------------------------------------------------------------------

@dataclass(frozen=True)
class BookEntry:
    account_id: str
    normalized: float
    renewal_target: int
    quadrant: Quadrant | None
    rank: int


@dataclass(frozen=True)
class PrioritizedBook:
    rep_id: str
    batch_id: str
    entries: tuple[BookEntry, ...]

    @property
    def account_ids(self) -> list[str]:
        return [e.account_id for e in self.entries]


def prioritize_book(
    rep_id: str,
    scores: Sequence[AccountScore],
    accounts: Mapping,
    quadrants: Mapping[str, Quadrant] | None = None,
) -> PrioritizedBook:
    """Order a rep's accounts by normalized score, then renewal target, then id.

    ``accounts`` maps account id to an object with ``rep_id`` and
    ``renewal_target`` (e.g. ledger Accounts).
    """
    batches = {s.batch_id for s in scores}
    if len(batches) > 1:
        raise ValidationError("scores come from more than one batch")
    rows = []
    for s in scores:
        acct = accounts.get(s.account_id)
        if acct is None:
            raise LookupFailure(f"unknown account {s.account_id!r}")
        if acct.rep_id != rep_id:
            raise ValidationError(f"account {s.account_id} does not belong to rep {rep_id}")
        rows.append((s, acct.renewal_target))
    rows.sort(key=lambda r: (-r[0].normalized, -r[1], r[0].account_id))
    quadrants = quadrants or {}
    entries = tuple(
        BookEntry(s.account_id, s.normalized, target, quadrants.get(s.account_id), i + 1)
        for i, (s, target) in enumerate(rows)
    )
    return PrioritizedBook(rep_id, batches.pop() if batches else "", entries)


def build_books(account_scores: Sequence[AccountScore], accounts: Mapping, score_threshold=0.0, target_threshold=None) -> dict[str, PrioritizedBook]:
    """Books for every rep owning a scored account, with quadrants over the whole batch."""
    targets = {s.account_id: accounts[s.account_id].renewal_target for s in account_scores}
    quads = segment_2x2({s.account_id: s.normalized for s in account_scores}, targets, score_threshold, target_threshold)
    by_rep: dict[str, list[AccountScore]] = {}
    for s in account_scores:
        by_rep.setdefault(accounts[s.account_id].rep_id, []).append(s)
    return {rep: prioritize_book(rep, rows, accounts, quads) for rep, rows in sorted(by_rep.items())}


SCORE_COLUMNS = ("account_id", "scope", "product_id", "raw_delta", "normalized", "quadrant", "rank_in_book")


def write_scores(scores: Sequence[AccountScore], books: Mapping[str, PrioritizedBook], path, preamble: str | None = None) -> None:
    placed = {e.account_id: e for b in books.values() for e in b.entries}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(preamble)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for s in scores:
            entry = placed.get(s.account_id) if s.scope.kind is ScopeKind.ACCOUNT_SPEND else None
            w.writerow([
                s.account_id,
                s.scope.kind.value,
                s.scope.product_id or "",
                repr(s.raw_delta),
                repr(s.normalized),
                entry.quadrant.value if entry and entry.quadrant else "",
                entry.rank if entry else "",
            ])


def read_scores(path) -> list[dict]:
    lines = [line for line in open(path, encoding="utf-8") if not line.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        row["scope"] = LabelScope(ScopeKind(row["scope"]), row["product_id"] or None)
        row["raw_delta"] = float(row["raw_delta"])
        row["normalized"] = float(row["normalized"])
        row["rank_in_book"] = int(row["rank_in_book"]) if row["rank_in_book"] else None
        out.append(row)
    return out
