"""Pipeline orchestration and report artifacts.

Output layout under the experiment directory::

    data/examples.csv, scaler.json, id_maps.json, cohort.json
    central/history.csv, summary.json, importance.csv, model.gbdt
    fed/history_<label>.csv, client_f1_<label>.csv, summary_<label>.json, model_<label>.bin
    comparison.txt, comparison.json

Data and history files are byte-reproducible for a fixed config and seed.
Summaries are written atomically once a run finishes, so an interrupted run
leaves its per-round history but no summary.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import boost
from .config import ExperimentConfig
from .data import (
    PreparedData,
    central_split,
    load_interactions,
    partition_by_user,
    prepare,
    synthesize_log,
)
from .errors import DataError, MissingRun
from .fed import RunHistory, StrategyConfig, run_simulation
from .metrics import RoundMetrics, summarize_history, write_history, write_history_header
from .model import ModelDims, save_checkpoint

log = logging.getLogger(__name__)


def write_json_atomic(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def out_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out)


def _recorded_config(cfg: ExperimentConfig) -> dict:
    # artifacts must not depend on where they are written
    d = cfg.as_dict()
    del d["out"]
    return d


def load_log(cfg: ExperimentConfig):
    if cfg.data.is_synthetic:
        return synthesize_log(cfg.synth_config())
    path = Path(cfg.data.source)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return load_interactions(
        path,
        cfg.data.user_column,
        cfg.data.skill_column,
        cfg.data.correct_column,
        cfg.data.delimiter,
    )


def run_prepare(cfg: ExperimentConfig) -> PreparedData:
    raw = load_log(cfg)
    prepared = prepare(raw, cfg.data.min_user_interactions, cfg.data.min_skill_interactions)
    d = out_dir(cfg) / "data"
    prepared.save(d)
    cohort = {
        "users": prepared.num_users,
        "skills": prepared.num_skills,
        "examples": len(prepared.examples),
        "interactions": prepared.num_interactions,
        "raw_interactions": len(raw),
        "dropped_rows": raw.dropped,
        "positive_rate": float(prepared.examples.label.mean()),
        "config": _recorded_config(cfg),
    }
    write_json_atomic(d / "cohort.json", cohort)
    return prepared


def load_prepared(cfg: ExperimentConfig) -> PreparedData:
    d = out_dir(cfg) / "data"
    if not (d / "examples.csv").is_file():
        raise DataError(f"no prepared dataset in {d}; run 'fedrec prepare' first")
    return PreparedData.load(d)


def _peak_row(history: list[RoundMetrics], best_round: int) -> dict:
    m = next(m for m in history if m.round == best_round)
    return {"accuracy": m.accuracy, "precision": m.precision, "recall": m.recall, "f1": m.f1}


def _summary_payload(history: list[RoundMetrics], name: str, kind: str, cfg: ExperimentConfig) -> dict:
    payload = {"name": name, "kind": kind, "rounds": len(history), "config": _recorded_config(cfg)}
    if history:
        s = summarize_history(history)
        payload.update(
            best_f1=s.best_value,
            best_round=s.best_round,
            mean_f1=s.mean,
            std_f1=s.std_dev,
            peak=_peak_row(history, s.best_round),
        )
    else:
        payload.update(best_f1=None, best_round=None, mean_f1=None, std_f1=None, summary_defined=False)
    return payload


@dataclass
class CentralRun:
    result: boost.TrainResult
    summary: dict


def run_central(cfg: ExperimentConfig, prepared: PreparedData | None = None) -> CentralRun:
    prepared = prepared or load_prepared(cfg)
    train_set, test_set = central_split(prepared.examples, cfg.data.test_fraction, cfg.seed)
    result = boost.train_tables(train_set, test_set, cfg.booster_config())
    d = out_dir(cfg) / "central"
    d.mkdir(parents=True, exist_ok=True)
    write_history(d / "history.csv", result.history)
    with open(d / "importance.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rank", "feature", "total_gain"))
        for rank, (name, gain) in enumerate(result.importance.ranking(), 1):
            w.writerow((rank, name, repr(gain)))
    boost.save(result.ensemble, d / "model.gbdt")
    summary = _summary_payload(result.history, "Centralized booster", "central", cfg)
    summary["train_examples"] = len(train_set)
    summary["test_examples"] = len(test_set)
    summary["importance"] = dict(result.importance.ranking())
    write_json_atomic(d / "summary.json", summary)
    return CentralRun(result, summary)


def run_fed_strategy(
    cfg: ExperimentConfig, strategy: StrategyConfig, prepared: PreparedData | None = None
) -> RunHistory:
    prepared = prepared or load_prepared(cfg)
    clients = partition_by_user(prepared.examples, cfg.data.test_fraction, cfg.seed)
    d = out_dir(cfg) / "fed"
    d.mkdir(parents=True, exist_ok=True)
    label = strategy.label
    summary_path = d / f"summary_{label}.json"
    if summary_path.exists():
        summary_path.unlink()

    with open(d / f"history_{label}.csv", "w", newline="", encoding="utf-8") as hist_fh, open(
        d / f"client_f1_{label}.csv", "w", newline="", encoding="utf-8"
    ) as cf_fh:
        hist = write_history_header(hist_fh)
        cf = csv.writer(cf_fh, lineterminator="\n")
        cf.writerow(("round", "f1_client_weighted"))

        def on_round(m: RoundMetrics) -> None:
            hist.writerow(m.as_row())
            cf.writerow((m.round, repr(m.f1_client_weighted)))
            hist_fh.flush()
            cf_fh.flush()
            log.info("%s round %d f1=%.4f", label, m.round, m.f1)

        dims = ModelDims(prepared.num_users, prepared.num_skills)
        history = run_simulation(clients, strategy, dims, on_round=on_round)

    save_checkpoint(history.final_params, d / f"model_{label}.bin")
    payload = _summary_payload(history.rounds, strategy.display_name, "federated", cfg)
    payload["strategy"] = strategy.as_dict()
    cs = history.client_f1_summary
    if cs is not None:
        payload["client_weighted_f1"] = {"best": cs.best_value, "best_round": cs.best_round, "mean": cs.mean, "std": cs.std_dev}
    write_json_atomic(summary_path, payload)
    return history


def run_fed(cfg: ExperimentConfig, prepared: PreparedData | None = None) -> dict[str, RunHistory]:
    prepared = prepared or load_prepared(cfg)
    return {s.label: run_fed_strategy(cfg, s, prepared) for s in cfg.strategies()}


@dataclass
class ComparisonReport:
    rows: list[dict]
    central: dict | None
    privacy_cost_ratio: float | None
    stability_ranking: list[str]

    def as_dict(self) -> dict:
        return {
            "runs": self.rows,
            "central": self.central,
            "privacy_cost_ratio": self.privacy_cost_ratio,
            "stability_ranking": self.stability_ranking,
        }

    def to_text(self) -> str:
        header = ("Strategy", "Best F1", "Best Round", "Mean F1", "Std. Dev.")
        table = [header]
        for r in self.rows + ([self.central] if self.central else []):
            if r["best_f1"] is None:
                table.append((r["name"], "-", "-", "-", "-"))
            else:
                table.append(
                    (r["name"], f"{r['best_f1']:.4f}", str(r["best_round"]), f"{r['mean_f1']:.4f}", f"{r['std_f1']:.4f}")
                )
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        lines = [
            "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
            for row in table
        ]
        lines.insert(1, "  ".join("-" * w for w in widths))
        if self.privacy_cost_ratio is not None:
            lines.append("")
            lines.append(f"best federated F1 / central peak F1 = {self.privacy_cost_ratio:.4f}")
        else:
            lines.append("")
            lines.append("privacy-cost ratio omitted: needs both a federated and a central run")
        if self.stability_ranking:
            lines.append("stability (lowest std first): " + ", ".join(self.stability_ranking))
        return "\n".join(lines) + "\n"


def privacy_cost_ratio(best_fed_f1: float, central_f1: float) -> float:
    return best_fed_f1 / central_f1


def build_report(summaries: list[dict]) -> ComparisonReport:
    fed_rows = [s for s in summaries if s["kind"] == "federated"]
    central = [s for s in summaries if s["kind"] == "central"]
    if not summaries:
        raise MissingRun("no completed runs found")
    c = central[0] if central else None
    complete = [r for r in fed_rows if r["best_f1"] is not None]
    ratio = None
    if complete and c is not None and c["best_f1"]:
        ratio = privacy_cost_ratio(max(r["best_f1"] for r in complete), c["best_f1"])
    ranking = [r["name"] for r in sorted(complete, key=lambda r: r["std_f1"])]
    rows = [{k: r.get(k) for k in ("name", "best_f1", "best_round", "mean_f1", "std_f1")} for r in fed_rows]
    crow = {k: c.get(k) for k in ("name", "best_f1", "best_round", "mean_f1", "std_f1")} if c else None
    return ComparisonReport(rows, crow, ratio, ranking)


def collect_summaries(run_dirs: list[str | Path]) -> list[dict]:
    found = []
    for run_dir in run_dirs:
        d = Path(run_dir)
        if not d.is_dir():
            raise MissingRun(f"run directory not found: {d}")
        paths = sorted((d / "fed").glob("summary_*.json")) + sorted((d / "central").glob("summary.json"))
        found.extend(json.loads(p.read_text(encoding="utf-8")) for p in paths)
    if not found:
        raise MissingRun(f"no completed runs under {', '.join(map(str, run_dirs))}")
    return found


def run_compare(run_dirs: list[str | Path], dest: str | Path) -> ComparisonReport:
    report = build_report(collect_summaries(run_dirs))
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "comparison.txt").write_text(report.to_text(), encoding="utf-8")
    write_json_atomic(dest / "comparison.json", report.as_dict())
    return report
