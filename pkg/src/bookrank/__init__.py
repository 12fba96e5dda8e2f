"""Account prioritisation: upsell/churn delta regression over a renewal ledger,
per-account Shapley attributions turned into seller-facing narratives, and
A/B and matched-cohort measurement of the tool's impact."""

__version__ = "0.1.0"
