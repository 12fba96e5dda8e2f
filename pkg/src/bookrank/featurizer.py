"""Feature matrices built from ledger snapshots.

Three preprocessing steps turn raw snapshot values into a model-ready
matrix: rate features are ratios of two usage counters, categoricals are
replaced by a smoothed mean of the training target, and year-over-year
columns are clamped to their training percentiles. Everything that is
fitted lives in ``encoder_state`` and is learned from training rows only.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, FitError, ValidationError
from .labeler import LabelScope, ScopeKind
from .ledger.model import Ledger, add_months

MISSING = float("nan")
DEFAULT_SMOOTHING = 10.0
DEFAULT_CAPS = (1.0, 99.0)


def derive_rate(numerator, denominator) -> float:
    """Ratio of two counters; 0/0 is 0 and x/0 is missing (NaN)."""
    if numerator is None or denominator is None:
        return MISSING
    if denominator > 0:
        return numerator / denominator
    if denominator == 0 and numerator == 0:
        return 0.0
    return MISSING


@dataclass(frozen=True)
class ResponseEncoder:
    levels: dict
    global_mean: float
    smoothing: float
    lower: float
    upper: float

    @classmethod
    def fit(cls, categories: Sequence[str], targets: Sequence[float], smoothing: float = DEFAULT_SMOOTHING) -> "ResponseEncoder":
        if len(categories) != len(targets):
            raise ValidationError("categories and targets differ in length")
        if not len(targets):
            raise FitError("cannot fit a response encoder on an empty training set")
        if smoothing < 0:
            raise ValidationError("smoothing must be >= 0")
        y = np.asarray(targets, dtype=float)
        gm = float(y.mean())
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for c, t in zip(categories, y):
            sums[c] = sums.get(c, 0.0) + float(t)
            counts[c] = counts.get(c, 0) + 1
        lo, hi = float(y.min()), float(y.max())
        levels = {}
        for c in sorted(sums):
            enc = (sums[c] + smoothing * gm) / (counts[c] + smoothing)
            levels[c] = min(max(enc, lo), hi)
        return cls(levels, min(max(gm, lo), hi), float(smoothing), lo, hi)

    def transform(self, categories: Iterable[str]) -> np.ndarray:
        return np.array([self.levels.get(c, self.global_mean) for c in categories], dtype=float)

    def to_dict(self) -> dict:
        return {
            "levels": dict(self.levels),
            "global_mean": self.global_mean,
            "smoothing": self.smoothing,
            "lower": self.lower,
            "upper": self.upper,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseEncoder":
        return cls(dict(d["levels"]), d["global_mean"], d["smoothing"], d["lower"], d["upper"])


def response_encode(categories: Sequence[str], targets: Sequence[float], smoothing: float = DEFAULT_SMOOTHING):
    enc = ResponseEncoder.fit(categories, targets, smoothing)
    return enc, enc.transform(categories)


def fit_caps(values: Sequence[float], lower_pct: float = 1.0, upper_pct: float = 99.0) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if not v.size:
        raise FitError("cannot fit caps on an empty column")
    if not 0 <= lower_pct <= upper_pct <= 100:
        raise ValidationError("percentiles must satisfy 0 <= lower <= upper <= 100")
    return float(np.percentile(v, lower_pct)), float(np.percentile(v, upper_pct))


def cap_outliers(values: Sequence[float], lower_pct: float = 1.0, upper_pct: float = 99.0):
    caps = fit_caps(values, lower_pct, upper_pct)
    return np.clip(np.asarray(values, dtype=float), *caps), caps


# -- feature registry -----------------------------------------------------------

@dataclass(frozen=True)
class _Snapshot:
    ledger: Ledger
    account_id: str
    scope: LabelScope
    at: date

    def signal(self, months_back: int = 0) -> dict | None:
        series = self.ledger.signal(self.account_id)
        return series.at(add_months(self.at, -months_back)) if series else None

    def quantity(self, months_back: int = 0) -> int:
        at = add_months(self.at, -months_back)
        products = [self.scope.product_id] if self.scope.product_id else [p.id for p in self.ledger.products]
        return sum(self.ledger.replay_quantities(self.account_id, p, at) for p in products)


def _metric(name, months_back=0):
    def f(s: _Snapshot):
        sig = s.signal(months_back)
        return MISSING if sig is None else float(sig[name])
    return f


def _ratio(num, den, months_back=0):
    def f(s: _Snapshot):
        sig = s.signal(months_back)
        return MISSING if sig is None else derive_rate(sig[num], sig[den])
    return f


def _spend(months_back):
    return lambda s: s.ledger.spend_at(s.account_id, add_months(s.at, -months_back)) / 100.0


def _yoy_growth(s: _Snapshot):
    now = s.ledger.spend_at(s.account_id, s.at)
    before = s.ledger.spend_at(s.account_id, add_months(s.at, -12))
    return derive_rate(now - before, before)


def _account_attr(name):
    return lambda s: getattr(s.ledger.account(s.account_id), name)


@dataclass(frozen=True)
class FeatureDef:
    kind: str  # numeric | rate | categorical
    compute: Callable[[_Snapshot], object]
    yoy: bool = False


FEATURES: dict[str, FeatureDef] = {
    "seat_utilization": FeatureDef("rate", _ratio("seats_active", "seats_purchased")),
    "seat_utilization_prev": FeatureDef("rate", _ratio("seats_active", "seats_purchased", 12)),
    "message_acceptance": FeatureDef("rate", _ratio("messages_accepted", "messages_sent")),
    "message_acceptance_prev": FeatureDef("rate", _ratio("messages_accepted", "messages_sent", 12)),
    "viewers_per_job": FeatureDef("rate", _ratio("job_views", "jobs_posted")),
    "viewers_per_job_prev": FeatureDef("rate", _ratio("job_views", "jobs_posted", 12)),
    "hires_per_seat": FeatureDef("rate", _ratio("hires", "seats_purchased")),
    "hires_per_seat_prev": FeatureDef("rate", _ratio("hires", "seats_purchased", 12)),
    "headcount_growth": FeatureDef("numeric", _metric("headcount_growth")),
    "macro_index": FeatureDef("numeric", _metric("macro_index")),
    "yoy_bookings_growth": FeatureDef("rate", _yoy_growth, yoy=True),
    "annual_spend": FeatureDef("numeric", _spend(0)),
    "annual_spend_prev": FeatureDef("numeric", _spend(12)),
    "scope_quantity": FeatureDef("numeric", lambda s: float(s.quantity())),
    "scope_quantity_prev": FeatureDef("numeric", lambda s: float(s.quantity(12))),
    "rep_tenure_months": FeatureDef("numeric", lambda s: float(s.ledger.rep(s.ledger.account(s.account_id).rep_id).tenure_months)),
    "region": FeatureDef("categorical", _account_attr("region")),
    "segment": FeatureDef("categorical", _account_attr("segment")),
    "size_band": FeatureDef("categorical", _account_attr("size_band")),
    "industry": FeatureDef("categorical", _account_attr("industry")),
}


# -- hierarchy metadata -------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMeta:
    original_name: str
    super_feature: str
    ultra_feature: str
    category: str
    insight_type: str
    insight_item: str = "value"
    is_rate: bool = False
    is_yoy: bool = False


META_COLUMNS = ("original_name", "super_feature", "ultra_feature", "category", "insight_type")


def _parse_meta(lines: Iterable[str], templates: Iterable[str] | None = None) -> list[FeatureMeta]:
    reader = csv.DictReader(line for line in lines if not line.startswith("#"))
    missing = set(META_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ConfigurationError(f"feature meta file lacks columns {sorted(missing)}")
    out, seen = [], set()
    for row in reader:
        name = row["original_name"].strip()
        if name in seen:
            raise ConfigurationError(f"feature {name!r} appears twice in meta")
        seen.add(name)
        fdef = FEATURES.get(name)
        if fdef is None:
            raise ConfigurationError(f"unknown feature {name!r}")
        if templates is not None and row["insight_type"] not in templates:
            raise ConfigurationError(f"feature {name!r} references unknown template {row['insight_type']!r}")
        out.append(
            FeatureMeta(
                name,
                row["super_feature"].strip(),
                row["ultra_feature"].strip(),
                row["category"].strip(),
                row["insight_type"].strip(),
                (row.get("insight_item") or "value").strip(),
                fdef.kind == "rate",
                fdef.yoy,
            )
        )
    return out


def load_meta(path=None, templates: Iterable[str] | None = None) -> list[FeatureMeta]:
    """Read a feature hierarchy CSV; the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("bookrank").joinpath("data/meta.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return _parse_meta(text.splitlines(), templates)


# -- assembly ---------------------------------------------------------------------

@dataclass(frozen=True)
class RowKey:
    account_id: str
    scope: LabelScope
    snapshot_at: date


@dataclass
class FeatureMatrix:
    values: np.ndarray
    raw: list[dict]
    keys: list[RowKey]
    meta: tuple[FeatureMeta, ...]
    encoder_state: dict
    schema_hash: str
    targets: np.ndarray | None = field(default=None)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(m.original_name for m in self.meta)

    def __len__(self):
        return self.values.shape[0]

    def subset(self, idx) -> "FeatureMatrix":
        idx = list(idx)
        return FeatureMatrix(
            self.values[idx],
            [self.raw[i] for i in idx],
            [self.keys[i] for i in idx],
            self.meta,
            self.encoder_state,
            self.schema_hash,
            None if self.targets is None else self.targets[idx],
        )


def schema_hash(meta: Sequence[FeatureMeta]) -> str:
    spec = [[m.original_name, FEATURES[m.original_name].kind] for m in meta]
    return hashlib.sha256(json.dumps(spec).encode()).hexdigest()[:16]


def state_hash(state: dict) -> str:
    return hashlib.sha256(json.dumps(state, sort_keys=True).encode()).hexdigest()[:16]


def _key_of(row) -> RowKey:
    if isinstance(row, RowKey):
        return row
    return RowKey(row.account_id, row.scope, row.feature_snapshot_at)


def fit_state(raw_columns: dict[str, list], targets: np.ndarray, meta: Sequence[FeatureMeta], smoothing=DEFAULT_SMOOTHING, caps=DEFAULT_CAPS) -> dict:
    if not len(targets):
        raise FitError("cannot fit feature encoders on zero training rows")
    params = {}
    for m in meta:
        col = raw_columns[m.original_name]
        if FEATURES[m.original_name].kind == "categorical":
            params[m.original_name] = {"encoder": ResponseEncoder.fit(col, targets, smoothing).to_dict()}
            continue
        v = np.asarray(col, dtype=float)
        seen = v[np.isfinite(v)]
        p = {"median": float(np.median(seen)) if seen.size else 0.0}
        if m.is_yoy:
            p["caps"] = list(fit_caps(seen, *caps)) if seen.size else [p["median"], p["median"]]
        params[m.original_name] = p
    return {"columns": [m.original_name for m in meta], "smoothing": float(smoothing), "params": params}


def _transform(raw_columns: dict[str, list], meta: Sequence[FeatureMeta], state: dict, n: int) -> np.ndarray:
    out = np.empty((n, len(meta)), dtype=float)
    for j, m in enumerate(meta):
        p = state["params"][m.original_name]
        col = raw_columns[m.original_name]
        if "encoder" in p:
            out[:, j] = ResponseEncoder.from_dict(p["encoder"]).transform(col)
            continue
        v = np.asarray(col, dtype=float).reshape(n)
        v = np.where(np.isfinite(v), v, p["median"])
        if "caps" in p:
            v = np.clip(v, *p["caps"])
        out[:, j] = v
    return out


def assemble(ledger: Ledger, rows: Sequence, meta: Sequence[FeatureMeta], state: dict | None = None, *, smoothing: float = DEFAULT_SMOOTHING) -> FeatureMatrix:
    """Build the matrix for ``rows`` (label samples or RowKeys).

    With ``state=None`` the encoders are fitted on these rows, which must
    then carry targets; otherwise the given state is applied unchanged.
    """
    meta = tuple(meta)
    for m in meta:
        if m.original_name not in FEATURES:
            raise ConfigurationError(f"unknown feature {m.original_name!r}")
    keys = [_key_of(r) for r in rows]
    end = ledger.end
    raw_columns: dict[str, list] = {m.original_name: [] for m in meta}
    raw_rows = []
    for k in keys:
        if (ledger.start is not None and k.snapshot_at < ledger.start) or (end is not None and k.snapshot_at > end):
            raise ValidationError(f"snapshot {k.snapshot_at} for {k.account_id} lies outside the ledger horizon")
        snap = _Snapshot(ledger, k.account_id, k.scope, k.snapshot_at)
        rec = {}
        for m in meta:
            v = FEATURES[m.original_name].compute(snap)
            raw_columns[m.original_name].append(v)
            rec[m.original_name] = None if isinstance(v, float) and math.isnan(v) else v
        raw_rows.append(rec)
    targets = None
    if rows and all(hasattr(r, "target") for r in rows):
        targets = np.array([float(r.target) for r in rows], dtype=float)
    if state is None and not keys:
        # nothing to fit on: an empty matrix that still carries the schema
        return FeatureMatrix(np.empty((0, len(meta))), [], [], meta, {}, schema_hash(meta), np.empty(0))
    if state is None:
        if targets is None:
            raise FitError("fitting feature encoders requires labelled rows")
        state = fit_state(raw_columns, targets, meta, smoothing)
    elif state["columns"] != [m.original_name for m in meta]:
        raise ValidationError("encoder state does not match the feature meta")
    values = _transform(raw_columns, meta, state, len(keys))
    if not np.isfinite(values).all():
        raise ValidationError("feature matrix contains non-finite values")
    return FeatureMatrix(values, raw_rows, keys, meta, state, schema_hash(meta), targets)


# -- files ----------------------------------------------------------------------------

KEY_COLUMNS = ("account_id", "scope", "product_id", "snapshot_at")


def write_features(matrix: FeatureMatrix, path, preamble: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if preamble:
            fh.write(preamble)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEY_COLUMNS + matrix.columns)
        for key, row in zip(matrix.keys, matrix.values):
            w.writerow(
                [key.account_id, key.scope.kind.value, key.scope.product_id or "", key.snapshot_at.isoformat()]
                + [repr(float(v)) for v in row]
            )


def read_features(path) -> tuple[list[RowKey], list[str], np.ndarray]:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    columns = header[len(KEY_COLUMNS):]
    keys, values = [], []
    for row in reader:
        scope = LabelScope(ScopeKind(row[1]), row[2] or None)
        keys.append(RowKey(row[0], scope, date.fromisoformat(row[3])))
        values.append([float(v) for v in row[len(KEY_COLUMNS):]])
    arr = np.array(values, dtype=float).reshape(len(values), len(columns))
    return keys, columns, arr
