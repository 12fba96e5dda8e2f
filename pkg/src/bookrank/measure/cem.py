"""Rep-level observational study with coarsened exact matching.

Reps who went from infrequent use to consistent monthly use are compared
with reps who stayed infrequent. Continuous confounders are binned
(quartiles by default), categoricals are matched exactly, and strata
without both kinds of rep are dropped. Controls are reweighted so each
stratum's weighted control mass reproduces its share of treated reps.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from ..errors import NoOverlapError, UndefinedMetricError, ValidationError
from .stats import DEFAULT_PERMUTATIONS, RigOutcome, group_rig, stratified_significance

DEFAULT_BINS = 4
COVERAGE_FLOOR = 0.8


class MauClass(str, Enum):
    CONSISTENT = "consistent_mau"
    INFREQUENT = "infrequent"
    NON_USER = "non_user"


def classify_mau(visit_log: Sequence[int], window: int = 12, start: int = 0) -> MauClass:
    """Consistent for 4+ active months in the window, infrequent for 1-3."""
    months = visit_log[start:start + window]
    if len(months) < window:
        raise ValidationError(f"visit log covers {len(months)} of the {window} months requested")
    active = sum(1 for m in months if m)
    if active >= 4:
        return MauClass.CONSISTENT
    return MauClass.INFREQUENT if active else MauClass.NON_USER


class Status(str, Enum):
    TREATED = "treated"
    CONTROL = "control"


@dataclass(frozen=True)
class StudyUnit:
    rep_id: str
    status: Status
    confounders: Mapping[str, object]


@dataclass(frozen=True)
class Stratum:
    key: tuple
    treated: tuple[str, ...]
    control: tuple[str, ...]
    control_weight: float


@dataclass(frozen=True)
class MatchedStudy:
    confounders: tuple[str, ...]
    cutpoints: Mapping[str, tuple | None]
    strata: tuple[Stratum, ...]
    units: tuple[StudyUnit, ...]
    cells: Mapping[str, tuple] = field(repr=False, default_factory=dict)

    @property
    def n_treated_total(self) -> int:
        return sum(1 for u in self.units if u.status is Status.TREATED)

    @property
    def n_control_total(self) -> int:
        return sum(1 for u in self.units if u.status is Status.CONTROL)

    @property
    def matched_treated(self) -> list[str]:
        return [r for s in self.strata for r in s.treated]

    @property
    def matched_control(self) -> list[str]:
        return [r for s in self.strata for r in s.control]

    @property
    def coverage(self) -> float:
        return len(self.matched_treated) / self.n_treated_total

    @property
    def control_coverage(self) -> float:
        return len(self.matched_control) / self.n_control_total

    def weights(self) -> dict[str, float]:
        out = {}
        for s in self.strata:
            out.update({r: 1.0 for r in s.treated})
            out.update({r: s.control_weight for r in s.control})
        return out

    def stratum_shares(self) -> list[float]:
        """Each stratum's normalised weighted control mass (its treated share)."""
        mass = [s.control_weight * len(s.control) for s in self.strata]
        total = sum(mass)
        return [m / total for m in mass]


def _is_categorical(values) -> bool:
    return any(isinstance(v, str) for v in values)


def _cutpoints(values: np.ndarray, spec) -> tuple:
    if isinstance(spec, int):
        if spec < 1:
            raise ValidationError("bin count must be >= 1")
        qs = np.quantile(values, np.arange(1, spec) / spec)
        return tuple(sorted({float(q) for q in qs}))
    return tuple(sorted(float(c) for c in spec))


def coarsen(units: Sequence[StudyUnit], confounders: Sequence[str], coarsening: Mapping | None = None):
    """Bin every unit; returns (cell tuple per rep id, cutpoints per confounder)."""
    coarsening = dict(coarsening or {})
    unknown = set(coarsening) - set(confounders)
    if unknown:
        raise ValidationError(f"coarsening given for unused confounders {sorted(unknown)}")
    cuts: dict[str, tuple | None] = {}
    columns = []
    for name in confounders:
        try:
            col = [u.confounders[name] for u in units]
        except KeyError:
            raise ValidationError(f"unit lacks confounder {name!r}") from None
        spec = coarsening.get(name, "exact" if _is_categorical(col) else DEFAULT_BINS)
        if spec == "exact":
            cuts[name] = None
            columns.append([str(v) for v in col])
        else:
            arr = np.asarray(col, dtype=float)
            cuts[name] = _cutpoints(arr, spec)
            columns.append(np.searchsorted(np.asarray(cuts[name]), arr, side="right").tolist())
    cells = {u.rep_id: tuple(c[i] for c in columns) for i, u in enumerate(units)}
    return cells, cuts


def cem_match(units: Sequence[StudyUnit], confounders: Sequence[str], coarsening: Mapping | None = None) -> MatchedStudy:
    """Match treated and control reps exactly on coarsened confounders.

    Controls in stratum s get weight (m_T,s / m_C,s) * (M_C / M_T) over the
    matched totals; treated reps weigh 1.
    """
    units = tuple(units)
    if len({u.rep_id for u in units}) != len(units):
        raise ValidationError("duplicate rep in study units")
    if not any(u.status is Status.TREATED for u in units) or not any(u.status is Status.CONTROL for u in units):
        raise NoOverlapError("study needs both treated and control reps")
    cells, cuts = coarsen(units, confounders, coarsening)
    groups: dict[tuple, tuple[list, list]] = defaultdict(lambda: ([], []))
    for u in units:
        groups[cells[u.rep_id]][0 if u.status is Status.TREATED else 1].append(u.rep_id)
    kept = [(k, t, c) for k, (t, c) in sorted(groups.items(), key=lambda kv: repr(kv[0])) if t and c]
    if not kept:
        raise NoOverlapError("no stratum contains both treated and control reps")
    m_t = sum(len(t) for _, t, _ in kept)
    m_c = sum(len(c) for _, _, c in kept)
    strata = tuple(
        Stratum(k, tuple(sorted(t)), tuple(sorted(c)), (len(t) / len(c)) * (m_c / m_t)) for k, t, c in kept
    )
    return MatchedStudy(tuple(confounders), cuts, strata, units, cells)


# -- estimation ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CemResult:
    delta: float
    lift: float
    rig_treated: float
    rig_control: float
    stratum_deltas: tuple[float, ...]
    stratum_shares: tuple[float, ...]


def _accounts(reps, outcomes: Mapping[str, Sequence[RigOutcome]]) -> list[RigOutcome]:
    out = []
    for r in reps:
        out.extend(outcomes.get(r, ()))
    return out


def cem_weighted_delta(study: MatchedStudy, outcomes: Mapping[str, Sequence[RigOutcome]]) -> CemResult:
    """Weighted sum over strata of the treated-minus-control RIG.

    Each stratum's RIGs pool the accounts of its reps; strata are combined
    with their normalised CEM control mass, which equals their share of
    matched treated reps.
    """
    shares = study.stratum_shares()
    deltas, rig_t, rig_c = [], 0.0, 0.0
    for s, lam in zip(study.strata, shares):
        try:
            t = group_rig(_accounts(s.treated, outcomes))
            c = group_rig(_accounts(s.control, outcomes))
        except UndefinedMetricError:
            raise UndefinedMetricError(f"stratum {s.key} has reps without accounts") from None
        deltas.append(t - c)
        rig_t += lam * t
        rig_c += lam * c
    delta = sum(lam * d for lam, d in zip(shares, deltas))
    return CemResult(delta, delta / rig_c, rig_t, rig_c, tuple(deltas), tuple(shares))


def naive_delta(units: Sequence[StudyUnit], outcomes: Mapping[str, Sequence[RigOutcome]]) -> CemResult:
    """Unmatched comparison of every treated rep's accounts with every control rep's."""
    t = group_rig(_accounts([u.rep_id for u in units if u.status is Status.TREATED], outcomes))
    c = group_rig(_accounts([u.rep_id for u in units if u.status is Status.CONTROL], outcomes))
    return CemResult(t - c, (t - c) / c, t, c, (t - c,), (1.0,))


def rep_rig(outcomes: Mapping[str, Sequence[RigOutcome]], rep_id: str) -> float:
    accts = outcomes.get(rep_id)
    if not accts:
        raise ValidationError(f"no outcomes for rep {rep_id}")
    return group_rig(accts)


@dataclass(frozen=True)
class AaResult:
    p_value: float
    passed: bool
    delta: float


def aa_validate(
    study: MatchedStudy,
    pre_outcomes: Mapping[str, Sequence[RigOutcome]],
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    alpha: float = 0.05,
) -> AaResult:
    """Pre-period check that matched cohorts do not differ in RIG.

    Reps are the units: each contributes its pre-period RIG, and treatment
    labels are permuted within strata. Passes when p > alpha.
    """
    groups = [
        ([rep_rig(pre_outcomes, r) for r in s.treated], [rep_rig(pre_outcomes, r) for r in s.control])
        for s in study.strata
    ]
    shares = study.stratum_shares()
    delta = sum(lam * (np.mean(t) - np.mean(c)) for lam, (t, c) in zip(shares, groups))
    p = stratified_significance(groups, shares, n_permutations, seed)
    return AaResult(p, p > alpha, float(delta))


# -- balance --------------------------------------------------------------------------------

def imbalance(cells: Mapping[str, tuple], treated: Mapping[str, float], control: Mapping[str, float]) -> float:
    """Multivariate L1: half the summed gap between weighted cell frequencies."""
    def dist(weights):
        total = sum(weights.values())
        out: dict = defaultdict(float)
        for r, w in weights.items():
            out[cells[r]] += w / total
        return out

    ft, fc = dist(treated), dist(control)
    keys = sorted(set(ft) | set(fc), key=repr)
    return 0.5 * sum(abs(ft.get(k, 0.0) - fc.get(k, 0.0)) for k in keys)


@dataclass(frozen=True)
class BalanceReport:
    coverage: float
    control_coverage: float
    l1_before: float
    l1_after: float
    meets_floor: bool


def balance_report(study: MatchedStudy, eval_bins: int | None = None) -> BalanceReport:
    """Coverage and L1 imbalance before and after matching.

    L1 is measured on the matching cells unless ``eval_bins`` asks for a
    separate quantile grid on the continuous confounders.
    """
    cells = study.cells
    if eval_bins is not None:
        spec = {n: eval_bins for n, c in study.cutpoints.items() if c is not None}
        cells, _ = coarsen(study.units, study.confounders, spec)
    treated_all = {u.rep_id: 1.0 for u in study.units if u.status is Status.TREATED}
    control_all = {u.rep_id: 1.0 for u in study.units if u.status is Status.CONTROL}
    w = study.weights()
    before = imbalance(cells, treated_all, control_all)
    after = imbalance(cells, {r: w[r] for r in study.matched_treated}, {r: w[r] for r in study.matched_control})
    return BalanceReport(study.coverage, study.control_coverage, before, after, study.coverage >= COVERAGE_FLOOR)
