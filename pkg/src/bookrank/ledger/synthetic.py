"""Seeded synthetic ledger with known ground truth.

Latent monthly drivers (seat utilisation, message acceptance, job views,
headcount growth and a regional macro index) follow stationary AR(1)
processes. Each renewal cycle's growth rate is a fixed linear function of
the drivers observed the month before renewal, plus one pairwise
interaction and Gaussian noise; quantity changes realise that rate as
renewal, add-on and non-co-term events. Rep skill drives both dashboard
adoption and renewal performance, so the visit log is confounded.
"""
from __future__ import annotations

import math
from datetime import date

import numpy as np

from ..errors import ConfigurationError
from .model import (
    REGIONS,
    SEGMENTS,
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
    add_months,
)

MAX_ACCOUNTS_PER_REP = 60
VISIT_MONTHS = 24

# id, name, unit price (cents), seat-based
CATALOG = (
    ("P1", "Recruiter", 800_000, True),
    ("P2", "Jobs", 500_000, False),
    ("P3", "Learning", 40_000, True),
    ("P4", "Sales Navigator", 120_000, True),
    ("P5", "Talent Insights", 1_500_000, False),
)
INDUSTRIES = ("software", "finance", "healthcare", "retail", "manufacturing")
SEGMENT_SPEND = {"SMB": 15_000.0, "MID": 60_000.0, "ENT": 250_000.0}  # dollars
SEGMENT_SKILL = {"SMB": -0.3, "MID": 0.0, "ENT": 0.3}
TENURE_LOG_MEAN, TENURE_LOG_SD = 3.3, 0.8
# experience bands (months): ramping, established, veteran
TENURE_BANDS = (12, 36)
TENURE_BAND_SKILL = (-0.9, 0.0, 0.8)

# growth-rate model: coefficients on centred drivers
UTIL_CENTER, ACCEPT_CENTER = 0.55, 0.3
COEF_UTIL, COEF_ACCEPT, COEF_VIEWS, COEF_HEADCOUNT, COEF_MACRO, COEF_INTERACT = 0.5, 0.6, 0.08, 1.5, 0.03, 2.0


def growth_rate(util, accept, views_latent, headcount, macro):
    """Noise-free cycle growth rate implied by the latent drivers."""
    u = util - UTIL_CENTER
    return (
        COEF_UTIL * u
        + COEF_ACCEPT * (accept - ACCEPT_CENTER)
        + COEF_VIEWS * views_latent
        + COEF_HEADCOUNT * headcount
        + COEF_MACRO * macro
        + COEF_INTERACT * u * headcount
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _ar1(rng, n, months, phi, sd):
    out = np.empty((n, months))
    out[:, 0] = rng.normal(0.0, sd, n)
    scale = sd * math.sqrt(1.0 - phi * phi)
    for t in range(1, months):
        out[:, t] = phi * out[:, t - 1] + rng.normal(0.0, scale, n)
    return out


def _size_band(spend_cents: int) -> str:
    if spend_cents < 25_000_00:
        return "small"
    if spend_cents < 100_000_00:
        return "medium"
    return "large"


def _stochastic_round(rng, x: float) -> int:
    return int(math.floor(x + rng.random()))


def _split(rng, total: int, parts: int) -> list[int]:
    """Split a positive integer into ``parts`` positive integers."""
    extra = rng.multinomial(total - parts, [1.0 / parts] * parts)
    return [int(1 + e) for e in extra]


def draw_rep(rng, index: int) -> tuple[Rep, float]:
    """A rep and its latent skill, set by experience band and segment."""
    region = REGIONS[int(rng.integers(len(REGIONS)))]
    segment = SEGMENTS[int(rng.choice(len(SEGMENTS), p=[0.4, 0.35, 0.25]))]
    tenure = int(np.clip(round(math.exp(rng.normal(TENURE_LOG_MEAN, TENURE_LOG_SD))), 1, 240))
    band = sum(tenure >= b for b in TENURE_BANDS)
    skill = TENURE_BAND_SKILL[band] + SEGMENT_SKILL[segment]
    return Rep(f"R{index + 1:04d}", region, segment, tenure), skill


def skill_factor(skill: float, eff: TreatmentEffectConfig) -> float:
    return max(0.05, 1.0 + eff.skill_outcome_effect * skill)


def draw_bookings(rng, target: int, skill: float, lift: float, eff: TreatmentEffectConfig) -> int:
    """Renewal bookings: target times lognormal noise, rep skill and any treatment lift."""
    return int(round(target * math.exp(rng.normal(0, eff.ratio_noise)) * skill_factor(skill, eff) * (1.0 + lift)))


def visit_log(rng, skill: float, eff: TreatmentEffectConfig) -> tuple[tuple, bool]:
    months = [0] * VISIT_MONTHS
    if rng.random() < eff.non_user_rate:
        return tuple(months), False

    def fill(lo, hi, count):
        for m in rng.choice(np.arange(lo, hi), size=count, replace=False):
            months[int(m)] = 1

    pre_consistent = rng.random() < 0.15
    fill(0, 12, int(rng.integers(4, 11)) if pre_consistent else int(rng.integers(1, 4)))
    converted = False
    if pre_consistent:
        fill(12, 24, int(rng.integers(4, 11)))
    else:
        p = 1.0 / (1.0 + math.exp(-(-0.9 + eff.skill_adoption_slope * skill)))
        converted = bool(rng.random() < p)
        fill(12, 24, int(rng.integers(4, 11)) if converted else int(rng.integers(1, 4)))
    return tuple(months), converted


def generate_synthetic(
    seed: int = 42,
    n_reps: int = 40,
    accounts_per_rep_range=(5, 60),
    n_products: int = 3,
    horizon_months: int = 36,
    effect_config: TreatmentEffectConfig | None = None,
    *,
    start: date = date(2021, 1, 1),
    add_on_prob: float = 0.3,
    non_co_term_prob: float = 0.15,
    noise_sd: float = 0.08,
) -> Ledger:
    """Build a deterministic synthetic ledger.

    Account counts per rep are drawn uniformly from ``accounts_per_rep_range``
    (the upper bound is capped at 60). Renewals recur every 12 months from an
    anchor in the second year of the horizon so every cycle has a full year
    of telemetry behind it.
    """
    eff = effect_config or TreatmentEffectConfig()
    lo, hi = accounts_per_rep_range
    if n_reps < 1:
        raise ConfigurationError("n_reps must be >= 1")
    if lo < 1 or hi < lo:
        raise ConfigurationError(f"invalid accounts_per_rep_range {accounts_per_rep_range!r}")
    hi = min(hi, MAX_ACCOUNTS_PER_REP)
    if lo > hi:
        raise ConfigurationError(f"accounts_per_rep_range minimum exceeds cap of {MAX_ACCOUNTS_PER_REP}")
    if not 1 <= n_products <= len(CATALOG):
        raise ConfigurationError(f"n_products must be in [1, {len(CATALOG)}]")
    if horizon_months < 24:
        raise ConfigurationError("horizon_months must be >= 24 (two renewal cycles)")
    if not (0 <= add_on_prob <= 1 and 0 <= non_co_term_prob <= 1 and add_on_prob + non_co_term_prob <= 1):
        raise ConfigurationError("event-shape probabilities must lie in [0, 1] and sum to <= 1")
    if noise_sd < 0:
        raise ConfigurationError("noise_sd must be >= 0")

    rng = np.random.default_rng(seed)
    H = horizon_months
    catalog = CATALOG[:n_products]
    products = [Product(pid, name, price) for pid, name, price, _ in catalog]
    price = {pid: p for pid, _, p, _ in catalog}
    seat_based = {pid: s for pid, _, _, s in catalog}

    # -- reps -----------------------------------------------------------------
    reps, rep_skill, rep_counts = [], {}, []
    for r in range(n_reps):
        rep, skill = draw_rep(rng, r)
        reps.append(rep)
        rep_skill[rep.id] = skill
        rep_counts.append(int(rng.integers(lo, hi + 1)))

    # -- accounts -------------------------------------------------------------
    specs = []
    for rep, count in zip(reps, rep_counts):
        for _ in range(count):
            specs.append(rep)
    n = len(specs)
    region_idx = {r: i for i, r in enumerate(REGIONS)}

    # latent monthly drivers, months 0..H-1
    util = _sigmoid(0.3 + rng.normal(0, 0.7, n)[:, None] + _ar1(rng, n, H, 0.92, 0.6))
    accept = _sigmoid(-0.9 + rng.normal(0, 0.5, n)[:, None] + _ar1(rng, n, H, 0.92, 0.4))
    views_latent = rng.normal(0, 0.4, n)[:, None] + _ar1(rng, n, H, 0.9, 0.3)
    headcount = rng.normal(0.03, 0.04, n)[:, None] + _ar1(rng, n, H, 0.9, 0.04)
    macro_region = _ar1(rng, len(REGIONS), H, 0.95, 1.0)
    macro = macro_region[[region_idx[r.region] for r in specs]]
    growth = growth_rate(util, accept, views_latent, headcount, macro)

    accounts, events, truths = [], [], {}
    month_dates = [add_months(start, m) for m in range(H)]
    qty_by_month = {pid: np.zeros((n, H), dtype=np.int64) for pid, *_ in catalog}
    spend_now = np.zeros(n, dtype=np.int64)

    for i, rep in enumerate(specs):
        aid = f"A{i + 1:05d}"
        target_spend = SEGMENT_SPEND[rep.segment] * math.exp(rng.normal(0, 0.6))
        k = int(rng.integers(1, n_products + 1))
        held = sorted(rng.choice([c[0] for c in catalog], size=k, replace=False).tolist())
        shares = rng.dirichlet(np.ones(k))
        baseline = {}
        for pid, share in zip(held, shares):
            baseline[pid] = max(1, int(round(share * target_spend * 100 / price[pid])))
        base_spend = sum(q * price[p] for p, q in baseline.items())
        anchor_m = 12 + int(rng.integers(12))
        industry = INDUSTRIES[int(rng.integers(len(INDUSTRIES)))]
        contract = {pid: f"{aid}-C{j + 1}" for j, pid in enumerate(held)}
        n_contracts = len(held)

        # per-product (month, delta) timeline
        timeline: dict[str, list[tuple[int, int]]] = {p: [] for p in held}

        def qty_at(pid, month):
            return baseline[pid] + sum(d for m, d in timeline[pid] if m <= month)

        for cycle_m in range(anchor_m, H, 12):
            g_real = growth[i, cycle_m - 1] + rng.normal(0, noise_sd)
            for pid in held:
                q = qty_at(pid, cycle_m)
                if q <= 0:
                    continue
                delta = _stochastic_round(rng, q * (g_real + rng.normal(0, 0.05)))
                delta = max(delta, -q)
                shape = rng.random()
                add_m = cycle_m + int(rng.integers(1, 5))
                nc_m = add_m + int(rng.integers(1, 6))
                if delta >= 4 and shape < non_co_term_prob and nc_m + 12 < H:
                    parts = _split(rng, delta, 4)
                    n_contracts += 1
                    nc_contract = f"{aid}-C{n_contracts}"
                    plan = [
                        (cycle_m, contract[pid], EventKind.RENEWAL, parts[0]),
                        (add_m, contract[pid], EventKind.ADD_ON, parts[1]),
                        (nc_m, nc_contract, EventKind.ADD_ON_NON_CO_TERM, parts[2]),
                        (nc_m + 12, nc_contract, EventKind.NON_CO_TERM_RENEWAL, parts[3]),
                    ]
                elif delta >= 2 and shape < non_co_term_prob + add_on_prob and add_m < H:
                    parts = _split(rng, delta, 2)
                    plan = [
                        (cycle_m, contract[pid], EventKind.RENEWAL, parts[0]),
                        (add_m, contract[pid], EventKind.ADD_ON, parts[1]),
                    ]
                else:
                    plan = [(cycle_m, contract[pid], EventKind.RENEWAL, delta)]
                for m, cid, kind, d in plan:
                    timeline[pid].append((m, d))
                    events.append(
                        QuantityEvent(aid, cid, pid, month_dates[m], kind, int(d), int(d) * price[pid])
                    )

        for pid in held:
            row = np.full(H, baseline[pid], dtype=np.int64)
            for m, d in timeline[pid]:
                row[m:] += d
            qty_by_month[pid][i] = row
        final_q = {pid: int(qty_by_month[pid][i, -1]) for pid in held}
        spend = base_spend + sum(sum(d for _, d in timeline[p]) * price[p] for p in held)
        spend_now[i] = spend
        g_true = float(growth[i, H - 1])
        truths[aid] = AccountTruth(
            aid,
            g_true,
            float(spend * g_true),
            {p: float(final_q[p] * g_true) for p in held if final_q[p] > 0},
        )
        target = max(int(round(spend * 1.03)), 1_000_00)
        accounts.append(
            Account(
                id=aid,
                rep_id=rep.id,
                region=rep.region,
                segment=rep.segment,
                size_band=_size_band(base_spend),
                base_spend=int(base_spend),
                renewal_anchor=month_dates[anchor_m],
                renewal_target=target,
                industry=industry,
                baseline_quantities=baseline,
            )
        )

    # -- telemetry -------------------------------------------------------------
    seats = sum(
        (qty_by_month[p] for p in qty_by_month if seat_based[p]),
        np.zeros((n, H), dtype=np.int64),
    )
    jobs = qty_by_month["P2"] if "P2" in qty_by_month else np.zeros((n, H), dtype=np.int64)
    seats_active = rng.binomial(seats, util)
    messages_sent = rng.poisson(seats * 40 + 20)
    messages_accepted = rng.binomial(messages_sent, accept)
    # occasional ingestion glitch: accepted messages recorded against zero sends
    glitch = rng.random((n, H)) < 0.01
    messages_sent = np.where(glitch, 0, messages_sent)
    jobs_posted = rng.poisson(np.where(jobs > 0, 2 + 3 * jobs, 0.3))
    job_views = rng.poisson(jobs_posted * 40.0 * np.exp(views_latent))
    hires = rng.poisson(0.2 * (seats + jobs) * (1 + 3 * accept))
    headcount_obs = np.round(headcount + rng.normal(0, 0.005, (n, H)), 4)
    macro_obs = np.round(100 + 8 * macro, 2)
    signals = []
    for i, acct in enumerate(accounts):
        signals.append(
            SignalSeries(
                acct.id,
                start,
                {
                    "seats_purchased": seats[i].tolist(),
                    "seats_active": seats_active[i].tolist(),
                    "messages_sent": messages_sent[i].tolist(),
                    "messages_accepted": messages_accepted[i].tolist(),
                    "jobs_posted": jobs_posted[i].tolist(),
                    "job_views": job_views[i].tolist(),
                    "hires": hires[i].tolist(),
                    "headcount_growth": headcount_obs[i].tolist(),
                    "macro_index": macro_obs[i].tolist(),
                },
            )
        )

    # -- adoption and renewal outcomes ------------------------------------------
    rep_truth, converted = {}, {}
    for rep in reps:
        visits, conv = visit_log(rng, rep_skill[rep.id], eff)
        rep_truth[rep.id] = RepTruth(rep.id, float(rep_skill[rep.id]), visits)
        converted[rep.id] = conv
    outcomes = []
    for i, acct in enumerate(accounts):
        skill = rep_skill[acct.rep_id]
        pre = draw_bookings(rng, acct.renewal_target, skill, 0.0, eff)
        post = draw_bookings(rng, acct.renewal_target, skill, eff.mau_lift if converted[acct.rep_id] else 0.0, eff)
        outcomes.append(
            Outcome(
                acct.id,
                renewal_bookings=post,
                pre_renewal_bookings=pre,
                quantities={p: int(qty_by_month[p][i, -1]) for p in acct.baseline_quantities},
            )
        )

    return Ledger(
        products=products,
        reps=reps,
        accounts=accounts,
        events=events,
        outcomes=outcomes,
        signals=signals,
        ground_truth=GroundTruth(eff, truths, rep_truth),
        start=start,
        horizon_months=H,
    )
