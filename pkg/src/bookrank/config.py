"""Run configuration.

Config files hold one ``key = value`` pair per line. Blank lines and lines
starting with ``#`` are ignored; keys are the field names of
:class:`RunConfig`; ``none`` clears an optional value. Dates are ISO
(``2023-01-01``), booleans are ``true``/``false``. Unknown or repeated
keys are errors.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path
from typing import Optional, get_type_hints

from .errors import ConfigurationError
from .regressor import Hyperparams


@dataclass(frozen=True)
class RunConfig:
    # synthetic ledger
    seed: int = 42
    n_reps: int = 40
    min_accounts_per_rep: int = 5
    max_accounts_per_rep: int = 60
    horizon_months: int = 36
    # labels and features; as_of defaults to the ledger's last event date
    as_of: Optional[date] = None
    lookback_months: int = 24
    smoothing: float = 10.0
    meta_path: Optional[str] = None
    templates_path: Optional[str] = None
    # regressor
    n_trees: int = 300
    max_depth: int = 4
    learning_rate: float = 0.05
    row_subsample: float = 0.8
    min_leaf: int = 20
    # ranking and narratives
    score_threshold: float = 0.0
    target_threshold: Optional[float] = None
    top_k: int = 5
    report_rep: Optional[str] = None
    # measurement
    n_permutations: int = 10_000
    ab_seed: int = 7
    ab_lift: float = 0.08
    mau_lift: float = 0.20

    def __post_init__(self):
        if self.min_accounts_per_rep < 1 or self.max_accounts_per_rep < self.min_accounts_per_rep:
            raise ConfigurationError("accounts per rep must satisfy 1 <= min <= max")
        for name in ("n_reps", "horizon_months", "lookback_months", "top_k", "n_permutations"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        self.hyperparams()  # validates the model settings

    def hyperparams(self) -> Hyperparams:
        try:
            return Hyperparams(self.n_trees, self.max_depth, self.learning_rate, self.row_subsample, self.min_leaf)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def lines(self) -> list[str]:
        return [f"{f.name} = {_render(getattr(self, f.name))}" for f in fields(self)]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return {f.name: _render(getattr(self, f.name)) for f in fields(self)}


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def _coerce(name: str, raw: str, kind):
    optional = getattr(kind, "__origin__", None) is not None and type(None) in kind.__args__
    if optional:
        if raw.lower() == "none":
            return None
        kind = next(a for a in kind.__args__ if a is not type(None))
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if kind is date:
            return date.fromisoformat(raw)
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    hints = get_type_hints(RunConfig)
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        if key not in hints:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: {key!r} given twice")
        values[key] = _coerce(key, raw, hints[key])
    return (base or RunConfig()).replace(**values)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} not found")
    return parse_config(p.read_text(encoding="utf-8"))
