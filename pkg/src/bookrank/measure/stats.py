"""RIG metric and permutation significance."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .. import _kernels
from ..errors import UndefinedMetricError, ValidationError

DEFAULT_PERMUTATIONS = 10_000


@dataclass(frozen=True)
class RigOutcome:
    account_id: str
    rep_id: str
    renewal_bookings: float
    renewal_target: float

    def __post_init__(self):
        if not self.renewal_bookings >= 0 or not math.isfinite(self.renewal_bookings):
            raise ValidationError(f"bookings of {self.account_id} must be finite and >= 0")
        if not self.renewal_target > 0 or not math.isfinite(self.renewal_target):
            raise ValidationError(f"renewal target of {self.account_id} must be finite and > 0")

    @property
    def ratio(self) -> float:
        return self.renewal_bookings / self.renewal_target


def group_rig(outcomes: Iterable[RigOutcome]) -> float:
    """Mean bookings/target ratio over every account of the group."""
    total, n = 0.0, 0
    for o in outcomes:
        total += o.ratio
        n += 1
    if n == 0:
        raise UndefinedMetricError("RIG of an empty group")
    return total / n


def significance(
    group_a: Sequence[float],
    group_b: Sequence[float],
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    strata: tuple[Sequence, Sequence] | None = None,
) -> float:
    """Two-sided permutation p-value for a difference in means.

    With ``strata`` (one label per value of each group) labels are only
    exchanged inside a stratum, matching a stratified randomisation. The
    statistic is then the size-weighted mean of within-stratum differences;
    strata missing either group carry no contrast and are left out.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if not a.size or not b.size:
        raise ValidationError("both groups must be non-empty")
    if strata is None:
        return stratified_significance([(a, b)], [1.0], n_permutations, seed)
    la, lb = strata
    if len(la) != a.size or len(lb) != b.size:
        raise ValidationError("one stratum label is needed per value")
    cells: dict = {}
    for v, k in zip(a, la):
        cells.setdefault(k, ([], []))[0].append(v)
    for v, k in zip(b, lb):
        cells.setdefault(k, ([], []))[1].append(v)
    used = [cells[k] for k in sorted(cells) if cells[k][0] and cells[k][1]]
    if not used:
        raise ValidationError("no stratum contains both groups")
    sizes = [len(x) + len(y) for x, y in used]
    total = sum(sizes)
    return stratified_significance(used, [s / total for s in sizes], n_permutations, seed)


def stratified_significance(
    strata: Sequence[tuple[Sequence[float], Sequence[float]]],
    weights: Sequence[float],
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> float:
    """Permutation p-value for a weighted sum of per-stratum mean differences.

    Group labels are reshuffled within each stratum only. The p-value is
    (1 + #{|T*| >= |T|}) / (1 + n_permutations); a sample with no variation
    at all gets p = 1.
    """
    if len(strata) != len(weights) or not strata:
        raise ValidationError("need one weight per stratum and at least one stratum")
    if n_permutations < 1:
        raise ValidationError("n_permutations must be >= 1")
    chunks, offsets, n_a = [], [0], []
    for a, b in strata:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if not a.size or not b.size:
            raise ValidationError("every stratum needs both groups non-empty")
        chunks += [a, b]
        offsets.append(offsets[-1] + a.size + b.size)
        n_a.append(a.size)
    values = np.concatenate(chunks)
    if not np.isfinite(values).all():
        raise ValidationError("values must be finite")
    if (values == values[0]).all():
        return 1.0
    obs = abs(_kernels.observed_statistic(values, offsets, n_a, weights))
    # relative tolerance so permutations equal to the observed split count as ties
    tol = 1e-12 * max(obs, float(np.max(np.abs(values))))
    count = _kernels.perm_count(values, offsets, n_a, weights, n_permutations, seed, tol)
    return (1 + count) / (1 + n_permutations)
