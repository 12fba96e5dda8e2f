from datetime import date

import pytest

from bookrank.config import RunConfig, load_config, parse_config
from bookrank.errors import ConfigurationError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(cfg.dumps()) == cfg


def test_grammar():
    cfg = parse_config("""
        # a comment
        seed = 9
        as_of = 2023-06-30
        target_threshold = none
        learning_rate = 0.1
        report_rep = R0002
    """)
    assert cfg.seed == 9 and cfg.as_of == date(2023, 6, 30)
    assert cfg.target_threshold is None and cfg.learning_rate == 0.1 and cfg.report_rep == "R0002"


@pytest.mark.parametrize("text", ["bogus = 1", "seed = 1\nseed = 2", "seed 1", "seed = ten", "as_of = yesterday"])
def test_bad_config(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


@pytest.mark.parametrize("field,value", [("n_reps", 0), ("min_leaf", 0), ("learning_rate", 0.0),
                                         ("max_accounts_per_rep", 1)])
def test_invalid_values(field, value):
    with pytest.raises(ConfigurationError):
        RunConfig().replace(**{field: value})


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert RunConfig().digest() != RunConfig(seed=1).digest()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.cfg")
