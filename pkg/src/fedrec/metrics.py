"""Classification metrics, confusion arithmetic and run-level summaries.

Both training paradigms (the federated DNN and the central booster) report
through this module so that their numbers are directly comparable.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCounts, EmptySeries

HISTORY_COLUMNS = (
    "round",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "loss",
    "num_eval_examples",
    "num_fit_clients",
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @classmethod
    def from_predictions(cls, labels, predicted) -> ConfusionCounts:
        """Tally counts from binary label and prediction vectors."""
        y = np.asarray(labels).astype(bool)
        p = np.asarray(predicted).astype(bool)
        if y.shape != p.shape:
            raise ValueError("labels and predictions differ in shape")
        return cls(
            tp=int(np.count_nonzero(y & p)),
            fp=int(np.count_nonzero(~y & p)),
            fn=int(np.count_nonzero(y & ~p)),
            tn=int(np.count_nonzero(~y & ~p)),
        )

    @classmethod
    def from_probabilities(cls, labels, probs, threshold: float = 0.5) -> ConfusionCounts:
        # a tie at the threshold counts as a positive prediction
        return cls.from_predictions(labels, np.asarray(probs) >= threshold)


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return c.tp / denom if denom else 0.0


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return c.tp / denom if denom else 0.0


def f1(p: float, r: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    s = p + r
    return 2.0 * p * r / s if s > 0 else 0.0


def f1_score(c: ConfusionCounts) -> float:
    return f1(precision(c), recall(c))


def accuracy(c: ConfusionCounts) -> float:
    if c.total < 1:
        raise EmptyCounts("accuracy of an empty confusion table")
    return (c.tp + c.tn) / c.total


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    loss: float
    num_eval_examples: int
    num_fit_clients: int
    # mean of per-client F1 weighted by test size; None outside federated runs
    f1_client_weighted: float | None = None

    @classmethod
    def from_counts(
        cls,
        round_idx: int,
        counts: ConfusionCounts,
        loss: float,
        num_fit_clients: int,
        f1_client_weighted: float | None = None,
    ) -> RoundMetrics:
        p, r = precision(counts), recall(counts)
        return cls(
            round=round_idx,
            accuracy=accuracy(counts),
            precision=p,
            recall=r,
            f1=f1(p, r),
            loss=float(loss),
            num_eval_examples=counts.total,
            num_fit_clients=num_fit_clients,
            f1_client_weighted=f1_client_weighted,
        )

    def as_row(self) -> list[str]:
        return [
            str(self.round),
            repr(self.accuracy),
            repr(self.precision),
            repr(self.recall),
            repr(self.f1),
            repr(self.loss),
            str(self.num_eval_examples),
            str(self.num_fit_clients),
        ]


@dataclass(frozen=True)
class MetricSummary:
    best_value: float
    best_round: int
    mean: float
    std_dev: float
    length: int

    def as_dict(self) -> dict:
        return {
            "best_value": self.best_value,
            "best_round": self.best_round,
            "mean": self.mean,
            "std_dev": self.std_dev,
            "length": self.length,
        }


def summarize(series: Sequence[tuple[int, float]]) -> MetricSummary:
    """Best value (earliest round on ties), population mean and std.

    `series` is a sequence of ``(round, value)`` pairs in run order.
    """
    if len(series) == 0:
        raise EmptySeries("cannot summarize an empty series")
    rounds = [int(r) for r, _ in series]
    values = np.array([float(v) for _, v in series], dtype=np.float64)
    best = int(np.argmax(values))  # argmax returns the first maximum
    return MetricSummary(
        best_value=float(values[best]),
        best_round=rounds[best],
        mean=statistics.mean(values.tolist()),
        std_dev=statistics.pstdev(values.tolist()),
        length=len(values),
    )


def summarize_history(history: Iterable[RoundMetrics], field: str = "f1") -> MetricSummary:
    return summarize([(m.round, getattr(m, field)) for m in history])


def write_history_header(fh) -> csv.writer:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    return writer


def write_history(path: str | Path, history: Iterable[RoundMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = write_history_header(fh)
        for m in history:
            writer.writerow(m.as_row())


def read_history(path: str | Path) -> list[RoundMetrics]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
            raise ValueError(f"{path}: not a round-history file")
        for row in reader:
            out.append(
                RoundMetrics(
                    round=int(row["round"]),
                    accuracy=float(row["accuracy"]),
                    precision=float(row["precision"]),
                    recall=float(row["recall"]),
                    f1=float(row["f1"]),
                    loss=float(row["loss"]),
                    num_eval_examples=int(row["num_eval_examples"]),
                    num_fit_clients=int(row["num_fit_clients"]),
                )
            )
    return out
