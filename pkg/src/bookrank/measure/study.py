"""Study inputs for the adoption analysis: rep units, visit logs and outcomes."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from ..ledger.model import Ledger, TreatmentEffectConfig
from ..ledger.synthetic import SEGMENT_SPEND, TENURE_BANDS, VISIT_MONTHS, draw_bookings, draw_rep, visit_log
from .cem import MauClass, Status, StudyUnit, classify_mau
from .stats import RigOutcome

DEFAULT_CONFOUNDERS = ("region", "segment", "tenure_months", "account_spend", "macro_index")
# tenure is coarsened on experience bands rather than quartiles
DEFAULT_COARSENING = {"tenure_months": list(TENURE_BANDS)}
PRE_WINDOW = (0, 12)
TREATMENT_WINDOW = (12, 24)


def study_status(log: Sequence[int]) -> Status | None:
    """Treated: infrequent then consistent. Control: infrequent in both windows."""
    before = classify_mau(log, PRE_WINDOW[1] - PRE_WINDOW[0], PRE_WINDOW[0])
    if before is not MauClass.INFREQUENT:
        return None
    after = classify_mau(log, TREATMENT_WINDOW[1] - TREATMENT_WINDOW[0], TREATMENT_WINDOW[0])
    if after is MauClass.CONSISTENT:
        return Status.TREATED
    if after is MauClass.INFREQUENT:
        return Status.CONTROL
    return None


@dataclass(frozen=True)
class StudyData:
    units: tuple[StudyUnit, ...]
    pre: Mapping[str, tuple[RigOutcome, ...]]
    post: Mapping[str, tuple[RigOutcome, ...]]


def study_from_ledger(ledger: Ledger, visits: Mapping[str, Sequence[int]] | None = None) -> StudyData:
    """Units for every rep in the study cohorts, with rep-level confounders."""
    if visits is None:
        if ledger.ground_truth is None:
            raise ValidationError("ledger has no visit logs; pass visits explicitly")
        visits = {r: t.visits for r, t in ledger.ground_truth.reps.items()}
    units, pre, post = [], {}, {}
    for rep in ledger.reps:
        log = visits.get(rep.id)
        if log is None:
            continue
        status = study_status(log)
        accounts = ledger.accounts_of(rep.id)
        if status is None or not accounts:
            continue
        macro = []
        for a in accounts:
            series = ledger.signal(a.id)
            if series is not None and "macro_index" in series.metrics:
                macro.extend(series.metrics["macro_index"][PRE_WINDOW[0]:PRE_WINDOW[1]])
        conf = {
            "region": rep.region,
            "segment": rep.segment,
            "tenure_months": float(rep.tenure_months),
            "account_spend": float(np.mean([a.base_spend for a in accounts])) / 100.0,
            "macro_index": float(np.mean(macro)) if macro else 0.0,
        }
        units.append(StudyUnit(rep.id, status, conf))
        pre_rows, post_rows = [], []
        for a in accounts:
            o = ledger.outcome(a.id)
            if o is None:
                continue
            post_rows.append(RigOutcome(a.id, rep.id, o.renewal_bookings, a.renewal_target))
            if o.pre_renewal_bookings is not None:
                pre_rows.append(RigOutcome(a.id, rep.id, o.pre_renewal_bookings, a.renewal_target))
        pre[rep.id] = tuple(pre_rows)
        post[rep.id] = tuple(post_rows)
    return StudyData(tuple(units), pre, post)


def simulate_study(
    seed: int,
    n_reps: int = 900,
    accounts_per_rep_range: tuple[int, int] = (5, 40),
    effect: TreatmentEffectConfig | None = None,
) -> StudyData:
    """Rep cohorts and renewal outcomes without the full ledger.

    Uses the ledger generator's rep, visit-log and bookings draws, so the
    confounding structure is the same at a fraction of the cost.
    """
    eff = effect or TreatmentEffectConfig()
    rng = np.random.default_rng(seed)
    macro = {r: float(100 + 8 * rng.normal()) for r in ("AMER", "EMEA", "APAC")}
    lo, hi = accounts_per_rep_range
    units, pre, post = [], {}, {}
    for i in range(n_reps):
        rep, skill = draw_rep(rng, i)
        n_acc = int(rng.integers(lo, hi + 1))
        log, converted = visit_log(rng, skill, eff)
        spend = SEGMENT_SPEND[rep.segment] * np.exp(rng.normal(0, 0.6, n_acc))
        targets = [max(int(round(s * 103)), 100_000) for s in spend]  # dollars -> cents, +3%
        status = study_status(log)
        if status is None:
            continue
        lift = eff.mau_lift if converted else 0.0
        ids = [f"{rep.id}-A{j + 1:03d}" for j in range(n_acc)]
        pre[rep.id] = tuple(RigOutcome(a, rep.id, draw_bookings(rng, t, skill, 0.0, eff), t) for a, t in zip(ids, targets))
        post[rep.id] = tuple(RigOutcome(a, rep.id, draw_bookings(rng, t, skill, lift, eff), t) for a, t in zip(ids, targets))
        conf = {
            "region": rep.region,
            "segment": rep.segment,
            "tenure_months": float(rep.tenure_months),
            "account_spend": float(np.mean(spend)),
            "macro_index": macro[rep.region],
        }
        units.append(StudyUnit(rep.id, status, conf))
    return StudyData(tuple(units), pre, post)


# -- visit logs ---------------------------------------------------------------------------

def write_visits(visits: Mapping[str, Sequence[int]], path, preamble: str | None = None) -> None:
    n = max((len(v) for v in visits.values()), default=VISIT_MONTHS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(preamble)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep_id"] + [f"month_{m:02d}" for m in range(n)])
        for rid in sorted(visits):
            w.writerow([rid] + [int(bool(x)) for x in visits[rid]])


def read_visits(path) -> dict[str, tuple[int, ...]]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if not header or header[0] != "rep_id":
        raise ValidationError("visits file must start with a rep_id column")
    out = {}
    for row in reader:
        flags = tuple(int(x) for x in row[1:])
        if any(f not in (0, 1) for f in flags):
            raise ValidationError(f"visit flags for {row[0]} must be 0 or 1")
        out[row[0]] = flags
    return out
