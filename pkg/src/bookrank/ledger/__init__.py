"""Sales ledger: domain types, JSON-lines I/O and the synthetic generator."""
from .io import export, ingest, loads
from .model import (
    SIGNAL_METRICS,
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
    day_before,
    replay_quantities,
)
from .synthetic import generate_synthetic

__all__ = [
    "SIGNAL_METRICS",
    "Account",
    "AccountTruth",
    "EventKind",
    "GroundTruth",
    "Ledger",
    "Outcome",
    "Product",
    "QuantityEvent",
    "Rep",
    "RepTruth",
    "SignalSeries",
    "TreatmentEffectConfig",
    "add_months",
    "day_before",
    "export",
    "generate_synthetic",
    "ingest",
    "loads",
    "replay_quantities",
]
