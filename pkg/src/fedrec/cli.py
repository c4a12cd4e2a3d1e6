"""Command-line harness.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment
from .config import load_config
from .data import synthesize_log
from .errors import ConfigError, DataError, FedRecError, MissingRun, NotEnoughClients

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("fedrec")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--out", help="experiment output directory (overrides config)")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic interaction log as CSV")
    _common(p)

    p = sub.add_parser("prepare", help="filter, engineer and scale an interaction log")
    _common(p)
    p.add_argument("--input", help="interaction CSV (default: the config's data source)")

    p = sub.add_parser("central", help="train the centralized boosted-tree baseline")
    _common(p)

    p = sub.add_parser("fed", help="run the federated strategy grid")
    _common(p)
    p.add_argument("--strategies", help="e.g. 'fedavg, fedprox:0.5'")
    p.add_argument("--rounds", type=int)

    p = sub.add_parser("compare", help="tabulate completed runs")
    _common(p)
    p.add_argument("runs", nargs="*", help="experiment directories (default: --out)")
    return parser


def _setup_logging(out: Path) -> None:
    # timestamps live only in the log file, never in data artifacts
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("fedrec")
    root.handlers = [handler]
    root.setLevel(logging.INFO)


def _dispatch(args) -> int:
    cfg = load_config(
        args.config,
        seed=args.seed,
        out=args.out,
        source=getattr(args, "input", None),
        strategies=getattr(args, "strategies", None),
        rounds=getattr(args, "rounds", None),
    )
    out = Path(cfg.out)
    _setup_logging(out)
    log.info("command %s config %s", args.command, cfg.as_dict())

    if args.command == "synth":
        path = out / "interactions.csv"
        raw = synthesize_log(cfg.synth_config())
        raw.to_csv(path)
        print(f"wrote {len(raw)} interactions to {path}")
    elif args.command == "prepare":
        prepared = experiment.run_prepare(cfg)
        print(
            f"users={prepared.num_users} skills={prepared.num_skills} "
            f"examples={len(prepared.examples)} positive_rate={prepared.examples.label.mean():.4f}"
        )
    elif args.command == "central":
        run = experiment.run_central(cfg)
        s = run.summary
        print(f"central best_f1={s['best_f1']:.4f} best_round={s['best_round']}")
        print("importance: " + ", ".join(name for name, _ in run.result.importance.ranking()))
    elif args.command == "fed":
        for label, history in experiment.run_fed(cfg).items():
            s = history.summary
            if s is None:
                print(f"{label}: no rounds run")
            else:
                print(f"{label}: best_f1={s.best_value:.4f} round={s.best_round} mean={s.mean:.4f} std={s.std_dev:.4f}")
    elif args.command == "compare":
        runs = args.runs or [out]
        report = experiment.run_compare(runs, out)
        sys.stdout.write(report.to_text())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return _dispatch(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotEnoughClients as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, MissingRun) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FedRecError, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
