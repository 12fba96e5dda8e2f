"""File-based batch pipeline: every stage reads its inputs from disk and writes its outputs back.

Stages run in the order of :data:`STAGES`. Each output file carries a
provenance record with the config digest, the effective config and the
sha256 of every input file, so reruns with unchanged inputs rewrite
identical bytes.
"""
from __future__ import annotations

import hashlib
import json
from datetime import date
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import featurizer, interpreter, labeler, narrator, ranker
from .config import RunConfig
from .errors import LookupFailure, NoOverlapError
from .labeler import LabelScope, ScopeKind
from .ledger import io as ledger_io
from .ledger.model import Ledger, TreatmentEffectConfig
from .ledger.synthetic import generate_synthetic
from .measure import abtest, cem, study
from .regressor import ModelSuite, train_suite

STAGES = ("synth", "labels", "features", "train", "score", "explain", "narrate", "report")
NO_INSIGHTS = "(no insights)"


FILE_NAMES = {
    "ledger": "ledger.jsonl",
    "visits": "visits.csv",
    "labels": "labels.csv",
    "features": "features.csv",
    "models": "models",
    "scores": "scores.csv",
    "attributions": "attributions.jsonl",
    "narratives": "narratives.jsonl",
    "report": "report.txt",
    "assignment": "assignment.json",
    "outcomes": "ab_outcomes.csv",
    "ab_report": "ab_report.json",
    "study_report": "study_report.json",
}


class Workspace:
    """Artifact paths under one directory; individual files can be redirected."""

    def __init__(self, root, **overrides):
        unknown = set(overrides) - set(FILE_NAMES)
        if unknown:
            raise ValueError(f"unknown artifacts {sorted(unknown)}")
        self.root = Path(root)
        self._overrides = {k: Path(v) for k, v in overrides.items()}

    def __getattr__(self, name):
        if name.startswith("_") or name not in FILE_NAMES:
            raise AttributeError(name)
        return self._overrides.get(name, self.root / FILE_NAMES[name])


# -- provenance ---------------------------------------------------------------------------

def file_digest(path) -> str:
    """sha256 of a file, or of the sorted (name, digest) pairs of a directory."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for child in sorted(p.iterdir()):
            h.update(f"{child.name}:{file_digest(child)};".encode())
    else:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def provenance(cfg: RunConfig, stage: str, inputs: Mapping[str, Path]) -> dict:
    return {
        "stage": stage,
        "config_hash": cfg.digest(),
        "config": cfg.as_dict(),
        "inputs": {name: file_digest(p) for name, p in sorted(inputs.items())},
    }


def preamble(prov: dict) -> str:
    return "# provenance " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n"


def write_json(obj: dict, path, prov: dict) -> None:
    Path(path).write_text(json.dumps({"provenance": prov, **obj}, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- shared helpers -----------------------------------------------------------------------

def load_ledger(path) -> Ledger:
    p = Path(path)
    if not p.is_file():
        raise LookupFailure(f"ledger file {p} not found")
    return ledger_io.ingest(p)


def scoring_date(cfg: RunConfig, ledger: Ledger) -> date:
    return cfg.as_of or ledger.end


def base_spend(ledger: Ledger, account_id: str, at: date) -> int:
    """Contract spend at scoring time; a fully churned account falls back to its original spend."""
    spend = ledger.spend_at(account_id, at)
    return spend if spend > 0 else ledger.account(account_id).base_spend


def scoring_rows(ledger: Ledger, suite: ModelSuite, at: date) -> dict[LabelScope, list[featurizer.RowKey]]:
    rows = {LabelScope.account(): [featurizer.RowKey(a.id, LabelScope.account(), at) for a in ledger.accounts]}
    for pid in sorted(suite.product_models):
        scope = LabelScope.product(pid)
        held = [a.id for a in ledger.accounts if pid in ledger.held_products(a.id, at)]
        if held:
            rows[scope] = [featurizer.RowKey(aid, scope, at) for aid in held]
    return rows


def scoring_matrices(cfg: RunConfig, ledger: Ledger, suite: ModelSuite) -> dict[LabelScope, featurizer.FeatureMatrix]:
    meta = featurizer.load_meta(cfg.meta_path)
    at = scoring_date(cfg, ledger)
    return {
        scope: featurizer.assemble(ledger, keys, meta, suite.model_for(scope).encoder_state, smoothing=cfg.smoothing)
        for scope, keys in scoring_rows(ledger, suite, at).items()
    }


def visits_from(ledger: Ledger, path: Path | None) -> dict[str, tuple[int, ...]]:
    if path is not None and Path(path).is_file():
        return study.read_visits(path)
    if ledger.ground_truth is None:
        raise LookupFailure("no visit log: pass a visits file")
    return {r: t.visits for r, t in ledger.ground_truth.reps.items()}


def effect_config(cfg: RunConfig) -> TreatmentEffectConfig:
    return TreatmentEffectConfig(ab_lift=cfg.ab_lift, mau_lift=cfg.mau_lift)


# -- stages -------------------------------------------------------------------------------

def stage_synth(cfg: RunConfig, ws: Workspace) -> None:
    ledger = generate_synthetic(
        cfg.seed, cfg.n_reps, (cfg.min_accounts_per_rep, cfg.max_accounts_per_rep),
        horizon_months=cfg.horizon_months, effect_config=effect_config(cfg),
    )
    prov = provenance(cfg, "synth", {})
    ledger_io.export(ledger, ws.ledger, prov)
    study.write_visits({r: t.visits for r, t in ledger.ground_truth.reps.items()}, ws.visits, preamble(prov))


def stage_labels(cfg: RunConfig, ws: Workspace) -> None:
    ledger = load_ledger(ws.ledger)
    samples = labeler.build_training_set(ledger, scoring_date(cfg, ledger), cfg.lookback_months)
    labeler.write_labels(samples, ws.labels, preamble(provenance(cfg, "labels", {"ledger": ws.ledger})))


def stage_features(cfg: RunConfig, ws: Workspace) -> None:
    """Account-scope training matrix, as the account model will see it."""
    ledger = load_ledger(ws.ledger)
    samples = labeler.read_labels(ws.labels)
    meta = featurizer.load_meta(cfg.meta_path)
    matrix = featurizer.assemble(ledger, samples.get(LabelScope.account(), []), meta, smoothing=cfg.smoothing)
    prov = provenance(cfg, "features", {"ledger": ws.ledger, "labels": ws.labels})
    featurizer.write_features(matrix, ws.features, preamble(prov))


def stage_train(cfg: RunConfig, ws: Workspace) -> None:
    ledger = load_ledger(ws.ledger)
    samples = labeler.read_labels(ws.labels)
    suite = train_suite(
        ledger, scoring_date(cfg, ledger), featurizer.load_meta(cfg.meta_path), cfg.hyperparams(), cfg.seed,
        lookback_months=cfg.lookback_months, training_set=samples,
    )
    suite.save(ws.models, provenance(cfg, "train", {"ledger": ws.ledger, "labels": ws.labels}))


def score_ledger(cfg: RunConfig, ledger: Ledger, suite: ModelSuite):
    at = scoring_date(cfg, ledger)
    scores = []
    for scope, matrix in scoring_matrices(cfg, ledger, suite).items():
        preds = suite.model_for(scope).predict(matrix)
        entries = [(k.account_id, float(p), base_spend(ledger, k.account_id, at)) for k, p in zip(matrix.keys, preds)]
        scores.extend(ranker.normalize_batch(entries, scope=scope))
    accounts = {a.id: a for a in ledger.accounts}
    account_scores = [s for s in scores if s.scope.kind is ScopeKind.ACCOUNT_SPEND]
    books = ranker.build_books(account_scores, accounts, cfg.score_threshold, cfg.target_threshold)
    return scores, books


def stage_score(cfg: RunConfig, ws: Workspace) -> None:
    suite = ModelSuite.load(ws.models)
    ledger = load_ledger(ws.ledger)
    scores, books = score_ledger(cfg, ledger, suite)
    prov = provenance(cfg, "score", {"ledger": ws.ledger, "models": ws.models})
    ranker.write_scores(scores, books, ws.scores, preamble(prov))


def stage_explain(cfg: RunConfig, ws: Workspace) -> None:
    suite = ModelSuite.load(ws.models)
    ledger = load_ledger(ws.ledger)
    out = []
    for scope, matrix in scoring_matrices(cfg, ledger, suite).items():
        out.extend(interpreter.explain_matrix(suite.model_for(scope), matrix))
    prov = provenance(cfg, "explain", {"ledger": ws.ledger, "models": ws.models})
    interpreter.write_attributions(out, ws.attributions, prov)


def stage_narrate(cfg: RunConfig, ws: Workspace) -> None:
    suite = ModelSuite.load(ws.models)
    ledger = load_ledger(ws.ledger)
    meta = featurizer.load_meta(cfg.meta_path)
    templates = narrator.load_templates(cfg.templates_path)
    account = LabelScope.account()
    matrix = scoring_matrices(cfg, ledger, suite)[account]
    raw = {k.account_id: r for k, r in zip(matrix.keys, matrix.raw)}
    records = []
    for a in interpreter.read_attributions(ws.attributions):
        if (a.scope or account) != account:
            continue
        records.append((a, narrator.narrate(a, meta, templates, raw[a.account_id], cfg.top_k)))
    prov = provenance(cfg, "narrate", {"ledger": ws.ledger, "models": ws.models, "attributions": ws.attributions})
    narrator.write_narratives(records, ws.narratives, prov)


def books_from_scores(ledger: Ledger, rows: Sequence[dict]) -> dict[str, ranker.PrioritizedBook]:
    """Rebuild books from a scores file, keeping its ranks and quadrants."""
    by_rep: dict[str, list] = {}
    for row in rows:
        if row["scope"].kind is not ScopeKind.ACCOUNT_SPEND:
            continue
        acct = ledger.account(row["account_id"])
        quad = ranker.Quadrant(row["quadrant"]) if row["quadrant"] else None
        entry = ranker.BookEntry(acct.id, row["normalized"], acct.renewal_target, quad, row["rank_in_book"])
        by_rep.setdefault(acct.rep_id, []).append(entry)
    return {
        rep: ranker.PrioritizedBook(rep, "", tuple(sorted(entries, key=lambda e: e.rank)))
        for rep, entries in sorted(by_rep.items())
    }


def render_book_report(
    books: Mapping[str, ranker.PrioritizedBook],
    narratives: Mapping[str, Sequence[str]],
    rep_id: str,
    top_k: int | None = None,
) -> str:
    """Plain-text book: one row per account in score order, its insight lines beneath."""
    book = books.get(rep_id)
    if book is None:
        raise LookupFailure(f"no scored book for rep {rep_id!r}")
    width = max([len(e.account_id) for e in book.entries] + [7])
    out = [f"Book of {rep_id}: {len(book.entries)} accounts", ""]
    out.append(f"{'rank':>4}  {'account':<{width}}  {'score':>8}  quadrant")
    for e in book.entries:
        quad = e.quadrant.value if e.quadrant else "-"
        out.append(f"{e.rank:>4}  {e.account_id:<{width}}  {e.normalized:>8.2f}  {quad}")
        lines = list(narratives.get(e.account_id, ()))
        if top_k is not None:
            lines = lines[:top_k]
        for line in lines or [NO_INSIGHTS]:
            out.append(f"{'':>4}  {'':<{width}}  - {line}")
    return "\n".join(out) + "\n"


def default_rep(books: Mapping[str, ranker.PrioritizedBook]) -> str:
    if not books:
        raise LookupFailure("no books were scored")
    return min(books)


def stage_report(cfg: RunConfig, ws: Workspace) -> None:
    ledger = load_ledger(ws.ledger)
    books = books_from_scores(ledger, ranker.read_scores(ws.scores))
    insights = {r["account_id"]: r["lines"] for r in narrator.read_narratives(ws.narratives)}
    rep = cfg.report_rep or default_rep(books)
    text = render_book_report(books, insights, rep, cfg.top_k)
    prov = provenance(cfg, "report", {"ledger": ws.ledger, "scores": ws.scores, "narratives": ws.narratives})
    ws.report.write_text(preamble(prov) + text, encoding="utf-8")


STAGE_FUNCS: dict[str, Callable[[RunConfig, Workspace], None]] = {
    "synth": stage_synth,
    "labels": stage_labels,
    "features": stage_features,
    "train": stage_train,
    "score": stage_score,
    "explain": stage_explain,
    "narrate": stage_narrate,
    "report": stage_report,
}


def run_pipeline(cfg: RunConfig, out_dir, stages: Sequence[str] = STAGES) -> Workspace:
    """Run the stages in order; the first failure propagates and earlier outputs stay on disk."""
    ws = Workspace(out_dir)
    ws.root.mkdir(parents=True, exist_ok=True)
    for name in stages:
        STAGE_FUNCS[name](cfg, ws)
    return ws


# -- measurement --------------------------------------------------------------------------

def _att_json(res: abtest.AttResult) -> dict:
    return {
        "n_treatment": res.n_treatment,
        "n_control": res.n_control,
        "rig_treatment": res.rig_treatment,
        "rig_control": res.rig_control,
        "delta": res.delta,
        "lift_pct": 100.0 * res.lift,
        "p_value": res.p_value,
    }


def ab_assign(cfg: RunConfig, ledger_path, out_path, visits_path=None) -> abtest.ExperimentAssignment:
    ledger = load_ledger(ledger_path)
    assignment = abtest.stratified_assign(ledger, cfg.ab_seed)
    assignment = abtest.mark_visited(assignment, visits_from(ledger, visits_path))
    inputs = {"ledger": Path(ledger_path)}
    if visits_path is not None and Path(visits_path).is_file():
        inputs["visits"] = Path(visits_path)
    assignment.save(out_path, provenance(cfg, "ab-assign", inputs))
    return assignment


def ab_simulate(cfg: RunConfig, ledger_path, assignment_path, out_path) -> None:
    ledger = load_ledger(ledger_path)
    assignment = abtest.ExperimentAssignment.load(assignment_path)
    outcomes = abtest.simulate_ab_outcomes(ledger, assignment, effect_config(cfg), seed=cfg.ab_seed)
    prov = provenance(cfg, "ab-simulate", {"ledger": Path(ledger_path), "assignment": Path(assignment_path)})
    abtest.write_outcomes(outcomes, out_path, preamble(prov))


def ab_report(cfg: RunConfig, assignment_path, outcomes_path, out_path) -> abtest.AttResult:
    assignment = abtest.ExperimentAssignment.load(assignment_path)
    outcomes = abtest.read_outcomes(outcomes_path)
    res = abtest.ab_report(assignment, outcomes, cfg.n_permutations, cfg.seed)
    prov = provenance(cfg, "ab-report", {"assignment": Path(assignment_path), "outcomes": Path(outcomes_path)})
    write_json(_att_json(res), out_path, prov)
    return res


def cem_study(cfg: RunConfig, ledger_path, visits_path, out_path) -> dict:
    """Matched rep-level study; a study without overlap is reported rather than raised."""
    ledger = load_ledger(ledger_path)
    data = study.study_from_ledger(ledger, visits_from(ledger, visits_path))
    n_t = sum(1 for u in data.units if u.status is cem.Status.TREATED)
    report: dict = {
        "confounders": list(study.DEFAULT_CONFOUNDERS),
        "n_treated": n_t,
        "n_control": len(data.units) - n_t,
        "coverage_floor": cem.COVERAGE_FLOOR,
    }
    try:
        matched = cem.cem_match(data.units, study.DEFAULT_CONFOUNDERS, study.DEFAULT_COARSENING)
    except NoOverlapError as exc:
        report.update(status="no_overlap", detail=str(exc), coverage=0.0)
    else:
        res = cem.cem_weighted_delta(matched, data.post)
        naive = cem.naive_delta(data.units, data.post)
        aa = cem.aa_validate(matched, data.pre, cfg.n_permutations, cfg.seed)
        bal = cem.balance_report(matched)
        report.update(
            status="ok",
            n_strata=len(matched.strata),
            matched_treated=len(matched.matched_treated),
            matched_control=len(matched.matched_control),
            rig_treated=res.rig_treated,
            rig_control=res.rig_control,
            delta=res.delta,
            lift_pct=100.0 * res.lift,
            naive_lift_pct=100.0 * naive.lift,
            coverage=bal.coverage,
            control_coverage=bal.control_coverage,
            meets_coverage_floor=bal.meets_floor,
            l1_before=bal.l1_before,
            l1_after=bal.l1_after,
            aa_p_value=aa.p_value,
            aa_passed=aa.passed,
        )
    inputs = {"ledger": Path(ledger_path)}
    if visits_path is not None and Path(visits_path).is_file():
        inputs["visits"] = Path(visits_path)
    write_json(report, out_path, provenance(cfg, "cem-study", inputs))
    return report


def run_demo(cfg: RunConfig, out_dir) -> Workspace:
    """Full pipeline followed by the A/B and CEM reports on the same ledger."""
    ws = run_pipeline(cfg, out_dir)
    ab_assign(cfg, ws.ledger, ws.assignment, ws.visits)
    ab_simulate(cfg, ws.ledger, ws.assignment, ws.outcomes)
    ab_report(cfg, ws.assignment, ws.outcomes, ws.ab_report)
    cem_study(cfg, ws.ledger, ws.visits, ws.study_report)
    return ws
