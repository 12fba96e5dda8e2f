"""Account-level A/B test: stratified 50/50 split inside every rep's book."""
from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import UndefinedMetricError, ValidationError
from ..ledger.model import Ledger, TreatmentEffectConfig
from ..ledger.synthetic import draw_bookings
from .stats import DEFAULT_PERMUTATIONS, RigOutcome, group_rig, significance

TREATMENT_WINDOW = (12, 24)  # visit-log months during which the experiment ran


class Arm(str, Enum):
    TREATMENT = "treatment"
    CONTROL = "control"


@dataclass(frozen=True)
class RepArms:
    n_treatment: int
    n_control: int
    visited: bool | None = None


@dataclass(frozen=True)
class ExperimentAssignment:
    seed: int
    arms: Mapping[str, Arm]
    strata: Mapping[str, tuple[str, str, str]]
    rep_of: Mapping[str, str]
    reps: Mapping[str, RepArms] = field(default_factory=dict)

    def accounts(self, arm: Arm, visited_only: bool = False) -> list[str]:
        out = []
        for aid, a in self.arms.items():
            if a is not arm:
                continue
            if visited_only and not self.reps[self.rep_of[aid]].visited:
                continue
            out.append(aid)
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "accounts": [
                {"account_id": aid, "rep_id": self.rep_of[aid], "arm": self.arms[aid].value, "stratum": list(self.strata[aid])}
                for aid in sorted(self.arms)
            ],
            "reps": {
                rid: {"n_treatment": r.n_treatment, "n_control": r.n_control, "visited": r.visited}
                for rid, r in sorted(self.reps.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentAssignment":
        arms, strata, rep_of = {}, {}, {}
        for rec in d["accounts"]:
            aid = rec["account_id"]
            arms[aid] = Arm(rec["arm"])
            strata[aid] = tuple(rec["stratum"])
            rep_of[aid] = rec["rep_id"]
        reps = {rid: RepArms(r["n_treatment"], r["n_control"], r["visited"]) for rid, r in d["reps"].items()}
        return cls(d["seed"], arms, strata, rep_of, reps)

    def save(self, path, provenance: dict | None = None) -> None:
        d = self.to_dict()
        if provenance is not None:
            d["provenance"] = provenance
        Path(path).write_text(json.dumps(d, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExperimentAssignment":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def stratified_assign(ledger: Ledger, seed: int) -> ExperimentAssignment:
    """Shuffle each (rep, size band, segment, region) cell and split it in half.

    An odd cell gives its extra account to the arm picked by a seeded coin.
    """
    rng = np.random.default_rng(seed)
    cells: dict[tuple, list[str]] = defaultdict(list)
    strata, rep_of = {}, {}
    for acct in ledger.accounts:
        key = (acct.size_band, acct.segment, acct.region)
        cells[(acct.rep_id, key)].append(acct.id)
        strata[acct.id] = key
        rep_of[acct.id] = acct.rep_id
    owners = set(rep_of.values())
    for rep in ledger.reps:
        if rep.id not in owners:
            warnings.warn(f"rep {rep.id} has no accounts; left out of the experiment", stacklevel=2)
    arms = {}
    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for (rep_id, _), ids in sorted(cells.items()):
        perm = rng.permutation(len(ids))
        n_t = len(ids) // 2
        if len(ids) % 2 and rng.random() < 0.5:
            n_t += 1
        for rank, i in enumerate(perm):
            arm = Arm.TREATMENT if rank < n_t else Arm.CONTROL
            arms[ids[i]] = arm
        counts[rep_id][0] += n_t
        counts[rep_id][1] += len(ids) - n_t
    reps = {rid: RepArms(t, c) for rid, (t, c) in sorted(counts.items())}
    return ExperimentAssignment(seed, dict(sorted(arms.items())), strata, rep_of, reps)


def mark_visited(assignment: ExperimentAssignment, visits: Mapping[str, Sequence[int]], window=TREATMENT_WINDOW) -> ExperimentAssignment:
    """Flag reps that opened the scores at least once during the experiment."""
    lo, hi = window
    reps = {}
    for rid, r in assignment.reps.items():
        log = visits.get(rid, ())
        reps[rid] = replace(r, visited=any(log[lo:hi]))
    return replace(assignment, reps=reps)


@dataclass(frozen=True)
class AttResult:
    delta: float
    lift: float
    rig_treatment: float
    rig_control: float
    n_treatment: int
    n_control: int
    p_value: float | None = None


def _visited_outcomes(assignment: ExperimentAssignment, outcomes: Mapping[str, RigOutcome]):
    if any(r.visited is None for r in assignment.reps.values()):
        raise ValidationError("visited flags are not populated")
    if not any(r.visited for r in assignment.reps.values()):
        raise UndefinedMetricError("no rep visited the scores")
    groups = {}
    for arm in Arm:
        ids = assignment.accounts(arm, visited_only=True)
        missing = [a for a in ids if a not in outcomes]
        if missing:
            raise ValidationError(f"no outcome for account {missing[0]}")
        groups[arm] = [outcomes[a] for a in ids]
    return groups[Arm.TREATMENT], groups[Arm.CONTROL]


def att_delta(assignment: ExperimentAssignment, outcomes: Mapping[str, RigOutcome]) -> AttResult:
    """RIG difference between arms over accounts of reps who visited."""
    t, c = _visited_outcomes(assignment, outcomes)
    rig_t, rig_c = group_rig(t), group_rig(c)
    delta = rig_t - rig_c
    return AttResult(delta, delta / rig_c, rig_t, rig_c, len(t), len(c))


def ab_report(
    assignment: ExperimentAssignment,
    outcomes: Mapping[str, RigOutcome],
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> AttResult:
    """ATT plus a randomisation p-value that reshuffles arms within each (rep, stratum) cell."""
    res = att_delta(assignment, outcomes)
    t, c = _visited_outcomes(assignment, outcomes)

    def cell(o):
        return (o.rep_id, assignment.strata[o.account_id])

    p = significance(
        [o.ratio for o in t], [o.ratio for o in c], n_permutations, seed,
        strata=([cell(o) for o in t], [cell(o) for o in c]),
    )
    return replace(res, p_value=p)


def simulate_ab_outcomes(
    ledger: Ledger,
    assignment: ExperimentAssignment,
    effect: TreatmentEffectConfig | None = None,
    seed: int = 0,
    *,
    lift: float | None = None,
) -> dict[str, RigOutcome]:
    """Renewal outcomes with a planted lift on treatment accounts of visiting reps."""
    eff = effect or (ledger.ground_truth.effect if ledger.ground_truth else TreatmentEffectConfig())
    lift = eff.ab_lift if lift is None else lift
    skills = {r.rep_id: r.skill for r in ledger.ground_truth.reps.values()} if ledger.ground_truth else {}
    rng = np.random.default_rng(seed)
    out = {}
    for acct in ledger.accounts:
        arm = assignment.arms.get(acct.id)
        if arm is None:
            continue
        treated = arm is Arm.TREATMENT and bool(assignment.reps[acct.rep_id].visited)
        bookings = draw_bookings(rng, acct.renewal_target, skills.get(acct.rep_id, 0.0), lift if treated else 0.0, eff)
        out[acct.id] = RigOutcome(acct.id, acct.rep_id, bookings, acct.renewal_target)
    return out


OUTCOME_COLUMNS = ("account_id", "rep_id", "renewal_bookings", "renewal_target")


def write_outcomes(outcomes: Mapping[str, RigOutcome], path, preamble: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(preamble)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_COLUMNS)
        for aid in sorted(outcomes):
            o = outcomes[aid]
            w.writerow([o.account_id, o.rep_id, o.renewal_bookings, o.renewal_target])


def read_outcomes(path) -> dict[str, RigOutcome]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    out = {}
    for row in csv.DictReader(lines):
        out[row["account_id"]] = RigOutcome(
            row["account_id"], row["rep_id"], float(row["renewal_bookings"]), float(row["renewal_target"])
        )
    return out
