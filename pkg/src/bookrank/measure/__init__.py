"""Impact measurement: the account-level A/B test and the rep-level CEM study."""
from .abtest import (
    Arm,
    AttResult,
    ExperimentAssignment,
    ab_report,
    att_delta,
    mark_visited,
    read_outcomes,
    simulate_ab_outcomes,
    stratified_assign,
    write_outcomes,
)
from .cem import (
    AaResult,
    BalanceReport,
    CemResult,
    MatchedStudy,
    MauClass,
    Status,
    StudyUnit,
    aa_validate,
    balance_report,
    cem_match,
    cem_weighted_delta,
    classify_mau,
    imbalance,
    naive_delta,
)
from .stats import RigOutcome, group_rig, significance, stratified_significance
from .study import DEFAULT_COARSENING, DEFAULT_CONFOUNDERS, StudyData, read_visits, simulate_study, study_from_ledger, write_visits

__all__ = [
    "Arm", "AttResult", "ExperimentAssignment", "ab_report", "att_delta", "mark_visited", "read_outcomes",
    "simulate_ab_outcomes", "stratified_assign", "write_outcomes", "AaResult", "BalanceReport", "CemResult",
    "MatchedStudy", "MauClass", "Status", "StudyUnit", "aa_validate", "balance_report", "cem_match",
    "cem_weighted_delta", "classify_mau", "imbalance", "naive_delta", "RigOutcome", "group_rig", "significance",
    "stratified_significance", "DEFAULT_COARSENING", "DEFAULT_CONFOUNDERS", "StudyData", "read_visits", "simulate_study",
    "study_from_ledger", "write_visits",
]
