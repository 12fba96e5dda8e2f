"""``bookrank`` command line.

Every stage subcommand reads and writes the standard file names inside
``--out`` unless explicit paths are given, so a run can be resumed one
stage at a time::

    bookrank --out run synth
    bookrank --out run labels
    ...
    bookrank --out run report --rep R0003
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import BookrankError


def _path(value: str | None, default: Path) -> Path:
    return Path(value) if value else default


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bookrank", description="Account prioritisation pipeline and impact measurement.")
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", metavar="DIR", default=".", help="artifact directory (default: current directory)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("synth", help="generate a synthetic ledger and visit log")
    s = sub.add_parser("labels", help="build overlapping-window training labels")
    s.add_argument("--ledger")
    s = sub.add_parser("features", help="assemble the account-scope training matrix")
    s.add_argument("--ledger")
    s.add_argument("--labels")
    s = sub.add_parser("train", help="train the account and product models")
    s.add_argument("--ledger")
    s.add_argument("--labels")
    for name, text in (("score", "score and rank every account"), ("explain", "TreeSHAP attributions for every scored row")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--ledger")
        s.add_argument("--models")
    s = sub.add_parser("narrate", help="render insight lines from attributions")
    s.add_argument("--ledger")
    s.add_argument("--models")
    s.add_argument("--attributions")
    s = sub.add_parser("report", help="print one rep's prioritised book")
    s.add_argument("--ledger")
    s.add_argument("--scores")
    s.add_argument("--narratives")
    s.add_argument("--rep", help="rep id (default: config report_rep, else the first rep)")

    s = sub.add_parser("ab-assign", help="stratified 50/50 account split within every book")
    s.add_argument("--ledger")
    s.add_argument("--visits")
    s = sub.add_parser("ab-simulate", help="synthetic renewal outcomes for an assignment")
    s.add_argument("--ledger")
    s.add_argument("--assignment")
    s = sub.add_parser("ab-report", help="RIG delta, lift and permutation p-value")
    s.add_argument("--assignment")
    s.add_argument("--outcomes")
    s = sub.add_parser("cem-study", help="matched rep-level adoption study")
    s.add_argument("--ledger")
    s.add_argument("--visits")
    sub.add_parser("demo", help="run every stage and both measurement reports")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _dispatch(args, cfg: RunConfig) -> None:
    ws = pipeline.Workspace(args.out)
    ws.root.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    # explicit paths point the stage at files outside the workspace
    if cmd in pipeline.STAGE_FUNCS:
        overrides = {k: Path(v) for k, v in vars(args).items() if k in ("ledger", "labels", "models", "attributions", "scores", "narratives") and v}
        if cmd == "report" and args.rep:
            cfg = cfg.replace(report_rep=args.rep)
        pipeline.STAGE_FUNCS[cmd](cfg, pipeline.Workspace(ws.root, **overrides) if overrides else ws)
        if cmd == "report":
            text = ws.report.read_text(encoding="utf-8")
            sys.stdout.write(text.split("\n", 1)[1])
    elif cmd == "ab-assign":
        pipeline.ab_assign(cfg, _path(args.ledger, ws.ledger), ws.assignment, _path(args.visits, ws.visits))
    elif cmd == "ab-simulate":
        pipeline.ab_simulate(cfg, _path(args.ledger, ws.ledger), _path(args.assignment, ws.assignment), ws.outcomes)
    elif cmd == "ab-report":
        res = pipeline.ab_report(cfg, _path(args.assignment, ws.assignment), _path(args.outcomes, ws.outcomes), ws.ab_report)
        print(f"lift {100 * res.lift:+.2f}%  delta {res.delta:+.4f}  p {res.p_value:.4g}  (n={res.n_treatment}/{res.n_control})")
    elif cmd == "cem-study":
        report = pipeline.cem_study(cfg, _path(args.ledger, ws.ledger), _path(args.visits, ws.visits), ws.study_report)
        print(json.dumps({k: v for k, v in report.items() if k != "confounders"}, sort_keys=True))
    elif cmd == "demo":
        pipeline.run_demo(cfg, ws.root)
        print(f"demo artifacts written to {ws.root}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _dispatch(args, _config(args))
    except BookrankError as exc:
        print(f"bookrank {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"bookrank {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
