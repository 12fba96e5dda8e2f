"""Natural-language insights from attributions and the feature hierarchy.

One candidate narrative is rendered per super feature, scored by the
largest |phi| among its original features. Within an ultra feature only
the strongest candidate survives; survivors in the same category are then
joined into a single insight line.
"""
from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigurationError, TemplateError
from .featurizer import FeatureMeta
from .interpreter import Attribution

SLOTS = ("prev_value", "current_value", "super_feature", "percent_change", "value")
ZERO_SUFFIX = "_from_zero"
DEFAULT_ZERO_TEXT = "{super_feature} is newly at {current_value}"
SEPARATOR = "; "


@dataclass(frozen=True)
class NarrativeTemplate:
    insight_type: str
    template_text: str
    required_slots: tuple[str, ...] = ()

    def __post_init__(self):
        found = []
        for _, name, spec, conv in string.Formatter().parse(self.template_text):
            if name is None:
                continue
            if name not in SLOTS or spec or conv:
                raise ConfigurationError(f"template {self.insight_type!r} has unsupported slot {{{name}}}")
            if name not in found:
                found.append(name)
        if not self.required_slots:
            object.__setattr__(self, "required_slots", tuple(found))
        elif set(found) - set(self.required_slots):
            raise ConfigurationError(f"template {self.insight_type!r} uses slots missing from required_slots")


def _parse_templates(lines: Iterable[str]) -> dict[str, NarrativeTemplate]:
    out = {}
    for row in csv.DictReader(line for line in lines if not line.startswith("#")):
        tid = row["insight_type"].strip()
        if tid in out:
            raise ConfigurationError(f"duplicate template {tid!r}")
        out[tid] = NarrativeTemplate(tid, row["template_text"])
    return out


def load_templates(path=None) -> dict[str, NarrativeTemplate]:
    if path is None:
        text = resources.files("bookrank").joinpath("data/templates.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return _parse_templates(text.splitlines())


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return f"{int(v):,}"
    if abs(v) >= 100:
        return f"{v:,.0f}"
    return f"{v:.3g}"


def percent_change(prev: float, current: float) -> str:
    pc = round(100.0 * (float(current) - float(prev)) / abs(float(prev)), 1)
    return f"{pc + 0.0:.1f}"  # + 0.0 folds -0.0 into 0.0


def impute_template(
    super_feature: str,
    values: Mapping[str, object],
    template: NarrativeTemplate,
    zero_template: NarrativeTemplate | None = None,
) -> str:
    """Fill a template; a zero previous value switches to the zero-baseline wording."""
    slots = {k: v for k, v in values.items() if v is not None}
    slots["super_feature"] = super_feature
    if "percent_change" in template.required_slots:
        for need in ("prev_value", "current_value"):
            if need not in slots:
                raise TemplateError(need)
        if float(slots["prev_value"]) == 0 and float(slots["current_value"]) == 0:
            slots["percent_change"] = percent_change(1.0, 1.0)  # unchanged at zero
        elif float(slots["prev_value"]) == 0:
            template = zero_template or NarrativeTemplate("zero_baseline", DEFAULT_ZERO_TEXT)
        else:
            slots["percent_change"] = percent_change(slots["prev_value"], slots["current_value"])
    for name in template.required_slots:
        if name not in slots:
            raise TemplateError(name)
    return template.template_text.format(**{k: format_value(v) for k, v in slots.items()})


@dataclass(frozen=True)
class Narrative:
    account_id: str
    super_feature: str
    ultra_feature: str
    category: str
    text: str
    importance: float
    constituent_features: tuple[str, ...]
    insight_type: str = ""


def build_narratives(
    attribution: Attribution,
    meta: Sequence[FeatureMeta],
    templates: Mapping[str, NarrativeTemplate],
    values: Mapping[str, object],
) -> list[Narrative]:
    """One candidate per super feature whose slot values are all available.

    ``values`` holds the displayable (pre-encoding) feature values of the row.
    """
    by_name = {m.original_name: m for m in meta}
    phi = attribution.named()
    for name in phi:
        if name not in by_name:
            raise ConfigurationError(f"feature {name!r} has no hierarchy entry")
    groups: dict[str, list[FeatureMeta]] = {}
    for m in meta:
        if m.original_name in phi:
            groups.setdefault(m.super_feature, []).append(m)
    out = []
    for sup, members in groups.items():
        first = members[0]
        if any((m.ultra_feature, m.category, m.insight_type) != (first.ultra_feature, first.category, first.insight_type) for m in members):
            raise ConfigurationError(f"super feature {sup!r} maps to more than one ultra/category/template")
        template = templates.get(first.insight_type)
        if template is None:
            raise ConfigurationError(f"unknown template {first.insight_type!r}")
        slots = {m.insight_item: values.get(m.original_name) for m in members}
        try:
            text = impute_template(sup, slots, template, templates.get(first.insight_type + ZERO_SUFFIX))
        except TemplateError:
            continue  # a value needed by the wording is missing for this row
        importance = max(abs(phi[m.original_name]) for m in members)
        out.append(
            Narrative(
                attribution.account_id, sup, first.ultra_feature, first.category, text, importance,
                tuple(m.original_name for m in members), first.insight_type,
            )
        )
    return out


def rank_and_dedupe(narratives: Sequence[Narrative], reweight: Mapping[str, float] | None = None) -> list[Narrative]:
    """Keep the strongest narrative per ultra feature, sorted by importance."""
    reweight = reweight or {}
    best: dict[tuple[str, str], Narrative] = {}
    for n in narratives:
        w = reweight.get(n.insight_type, 1.0)
        if w != 1.0:
            n = Narrative(n.account_id, n.super_feature, n.ultra_feature, n.category, n.text,
                          n.importance * w, n.constituent_features, n.insight_type)
        key = (n.account_id, n.ultra_feature)
        cur = best.get(key)
        if cur is None or (n.importance, cur.super_feature) > (cur.importance, n.super_feature):
            best[key] = n
    return sorted(best.values(), key=lambda n: (-n.importance, n.category, n.super_feature))


@dataclass(frozen=True)
class InsightLine:
    category: str
    text: str
    importance: float

    def __str__(self):
        return f"{self.category}: {self.text}"


def concatenate_by_category(narratives: Sequence[Narrative], top_k: int | None = None) -> list[InsightLine]:
    groups: dict[str, list[Narrative]] = {}
    for n in sorted(narratives, key=lambda n: (-n.importance, n.super_feature)):
        groups.setdefault(n.category, []).append(n)
    lines = [
        InsightLine(cat, SEPARATOR.join(n.text for n in members), members[0].importance)
        for cat, members in groups.items()
    ]
    lines.sort(key=lambda line: (-line.importance, line.category))
    return lines if top_k is None else lines[:top_k]


def narrate(
    attribution: Attribution,
    meta: Sequence[FeatureMeta],
    templates: Mapping[str, NarrativeTemplate],
    values: Mapping[str, object],
    top_k: int | None = 5,
    reweight: Mapping[str, float] | None = None,
) -> list[InsightLine]:
    candidates = build_narratives(attribution, meta, templates, values)
    return concatenate_by_category(rank_and_dedupe(candidates, reweight), top_k)


def write_narratives(records: Iterable[tuple[Attribution, Sequence[InsightLine]]], path, provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True, separators=(",", ":")) + "\n")
        for attribution, lines in records:
            scope = attribution.scope
            rec = {
                "account_id": attribution.account_id,
                "scope": scope.kind.value if scope else "account_spend",
                "product_id": scope.product_id if scope else None,
                "lines": [str(line) for line in lines],
                "importance": [line.importance for line in lines],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_narratives(path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        if "account_id" in rec:
            out.append(rec)
    return out

