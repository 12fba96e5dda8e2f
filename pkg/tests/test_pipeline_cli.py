import json
from pathlib import Path

import pytest

from bookrank import pipeline
from bookrank.cli import main
from bookrank.config import RunConfig
from bookrank.errors import LookupFailure
from bookrank.ranker import BookEntry, PrioritizedBook, Quadrant

GOLDEN = Path(__file__).parent / "golden" / "demo_report.txt"

SMALL = """\
n_reps = 6
n_trees = 40
n_permutations = 500
"""


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["--config", str(cfg), "--out", str(root / "run"), "demo"]) == 0
    return root


def test_demo_writes_every_artifact(demo_dir):
    ws = pipeline.Workspace(demo_dir / "run")
    for key in pipeline.FILE_NAMES:
        assert getattr(ws, key).exists(), key


def test_outputs_carry_provenance(demo_dir):
    ws = pipeline.Workspace(demo_dir / "run")
    for path in (ws.labels, ws.features, ws.scores, ws.report):
        first = path.read_text().splitlines()[0]
        assert first.startswith("# provenance ")
        prov = json.loads(first[len("# provenance "):])
        assert prov["config_hash"] == RunConfig(n_reps=6, n_trees=40, n_permutations=500).digest()
    rec = json.loads(ws.attributions.read_text().splitlines()[0])
    assert set(rec["provenance"]["inputs"]) == {"ledger", "models"}
    assert "provenance" in json.loads(ws.ab_report.read_text())


def test_demo_report_golden(demo_dir):
    text = (demo_dir / "run" / "report.txt").read_text()
    assert text.split("\n", 1)[1] == GOLDEN.read_text()


def test_stage_by_stage_matches_demo(demo_dir, capsys):
    cfg = demo_dir / "small.cfg"
    out = demo_dir / "staged"
    for stage in pipeline.STAGES:
        assert main(["--config", str(cfg), "--out", str(out), stage]) == 0
    assert capsys.readouterr().out == GOLDEN.read_text()
    for name in ("scores.csv", "narratives.jsonl", "report.txt"):
        assert (out / name).read_bytes() == (demo_dir / "run" / name).read_bytes()


def test_report_for_unknown_rep(demo_dir, capsys):
    rc = main(["--out", str(demo_dir / "run"), "--config", str(demo_dir / "small.cfg"), "report", "--rep", "NOPE"])
    assert rc == 1
    assert "LookupFailure" in capsys.readouterr().err


def test_score_without_models_fails(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    assert main(["--config", str(cfg), "--out", str(tmp_path), "synth"]) == 0
    assert main(["--config", str(cfg), "--out", str(tmp_path), "score"]) == 1
    assert "ServingError" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "synth"]) == 1
    assert "ConfigurationError" in capsys.readouterr().err


def test_missing_ledger(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "labels"]) == 1
    assert "LookupFailure" in capsys.readouterr().err


BOOK = PrioritizedBook("R1", "b", (
    BookEntry("A", 40.0, 100, Quadrant.HIGH_SPEND_GROW, 1),
    BookEntry("B", 3.5, 50, Quadrant.LOW_SPEND_GROW, 2),
    BookEntry("C", -12.0, 80, Quadrant.HIGH_SPEND_RISK, 3),
))


def test_render_book_report():
    text = pipeline.render_book_report({"R1": BOOK}, {"A": ["Usage: up"], "C": ["Macro: down", "Profile: x"]}, "R1")
    lines = text.splitlines()
    assert lines[0] == "Book of R1: 3 accounts"
    rows = [line for line in lines if line[:4].strip().isdigit()]
    assert [r.split()[1] for r in rows] == ["A", "B", "C"]
    b_row = lines.index(rows[1])
    assert lines[b_row + 1].strip() == "- " + pipeline.NO_INSIGHTS
    assert "- Macro: down" in text and "- Profile: x" in text


def test_render_top_k_and_unknown_rep():
    text = pipeline.render_book_report({"R1": BOOK}, {"C": ["one", "two"]}, "R1", top_k=1)
    assert "- one" in text and "- two" not in text
    with pytest.raises(LookupFailure):
        pipeline.render_book_report({"R1": BOOK}, {}, "R9")
