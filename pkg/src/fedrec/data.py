"""Interaction-log ingestion, preprocessing and client partitioning.

The pipeline turns raw ``(user, skill, correct)`` events into one engineered
row per (student, skill) pair:

1. drop inactive students and rarely attempted skills,
2. compute per-student and per-skill success rates plus activity counts,
3. binarize the pair success rate at 0.7,
4. densify raw ids into zero-based indices,
5. min-max scale the three continuous features.

Tables are kept as parallel numpy columns rather than lists of row objects.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, NamedTuple, Sequence, TextIO

import numpy as np

from .errors import (
    DegenerateLabels,
    DegenerateLabelsWarning,
    EmptyAfterFilter,
    EmptyInput,
    MissingColumn,
)

POSITIVE_RATE_THRESHOLD = 0.7
CONTINUOUS_FEATURES = ("user_mean_correct", "user_interaction_count", "skill_mean_correct")
EXAMPLE_COLUMNS = (
    "user_idx",
    "skill_idx",
    "user_mean_correct",
    "user_interaction_count",
    "skill_mean_correct",
    "target_correct_rate",
    "label",
)
# columns fed to the booster, in matrix order
MODEL_FEATURES = (
    "user_idx",
    "skill_idx",
    "user_mean_correct",
    "user_interaction_count",
    "skill_mean_correct",
)


class Source(enum.Enum):
    REAL_CSV = "real_csv"
    SYNTHETIC = "synthetic"


class Interaction(NamedTuple):
    user_id: int
    skill_id: int
    correct: int


@dataclass
class InteractionLog:
    """Raw event records stored column-wise."""

    user_id: np.ndarray
    skill_id: np.ndarray
    correct: np.ndarray
    source: Source = Source.REAL_CSV
    dropped: int = 0

    def __post_init__(self):
        self.user_id = np.asarray(self.user_id, dtype=np.int64)
        self.skill_id = np.asarray(self.skill_id, dtype=np.int64)
        self.correct = np.asarray(self.correct, dtype=np.int8)
        n = len(self.user_id)
        if len(self.skill_id) != n or len(self.correct) != n:
            raise ValueError("interaction columns differ in length")
        if n and (self.user_id.min() < 0 or self.skill_id.min() < 0):
            raise ValueError("ids must be non-negative")
        if n and not np.isin(self.correct, (0, 1)).all():
            raise ValueError("correct must be 0 or 1")

    @classmethod
    def from_records(cls, records: Sequence[tuple[int, int, int]], source=Source.REAL_CSV):
        arr = np.asarray(records, dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], source=source)

    def __len__(self) -> int:
        return len(self.user_id)

    def __iter__(self) -> Iterator[Interaction]:
        for u, s, c in zip(self.user_id.tolist(), self.skill_id.tolist(), self.correct.tolist()):
            yield Interaction(u, s, c)

    @property
    def records(self) -> list[Interaction]:
        return list(self)

    @property
    def num_users(self) -> int:
        return len(np.unique(self.user_id))

    @property
    def num_skills(self) -> int:
        return len(np.unique(self.skill_id))

    def subset(self, mask: np.ndarray) -> InteractionLog:
        return InteractionLog(
            self.user_id[mask], self.skill_id[mask], self.correct[mask], self.source, self.dropped
        )

    def to_csv(self, path: str | Path, delimiter: str = ",") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(("user_id", "skill_id", "correct"))
            w.writerows(zip(self.user_id.tolist(), self.skill_id.tolist(), self.correct.tolist()))


def _parse_id(text: str) -> int | None:
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value) or value != int(value) or value < 0:
        return None
    return int(value)


def load_interactions(
    source: str | Path | BinaryIO | TextIO,
    user_column: str = "user_id",
    skill_column: str = "skill_id",
    correct_column: str = "correct",
    delimiter: str = ",",
) -> InteractionLog:
    """Read a header-bearing delimited table of interactions.

    Columns are looked up by name, so extra columns and any column order are
    fine. Rows whose user, skill or correct value is missing or unparseable
    are skipped; their number is stored on ``InteractionLog.dropped``.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return load_interactions(fh, user_column, skill_column, correct_column, delimiter)
    if isinstance(source.read(0), bytes):
        source = io.TextIOWrapper(source, encoding="utf-8", errors="replace", newline="")

    reader = csv.reader(source, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        raise EmptyInput("input has no header row")
    header = [h.strip().lstrip("﻿") for h in header]
    cols = []
    for name in (user_column, skill_column, correct_column):
        if name not in header:
            raise MissingColumn(f"column {name!r} not found in header")
        cols.append(header.index(name))
    iu, isk, ic = cols

    users, skills, correct = [], [], []
    dropped = 0
    for row in reader:
        if not row:
            continue
        try:
            u, s, c = _parse_id(row[iu]), _parse_id(row[isk]), _parse_id(row[ic])
        except IndexError:
            u = None
        if u is None or s is None or c not in (0, 1):
            dropped += 1
            continue
        users.append(u)
        skills.append(s)
        correct.append(c)
    if not users:
        raise EmptyInput(f"no usable data rows ({dropped} dropped)")
    return InteractionLog(users, skills, correct, Source.REAL_CSV, dropped)


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 50
    num_skills: int = 20
    interactions_per_user: tuple[int, int] = (60, 120)
    user_ability_spread: float = 1.0
    skill_difficulty_spread: float = 1.0
    seed: int = 0
    # centre of the ability distribution; shifts the overall success rate
    ability_mean: float = 0.0

    def __post_init__(self):
        lo, hi = self.interactions_per_user
        if self.num_users < 1 or self.num_skills < 1 or lo < 1 or hi < lo:
            raise ValueError("synthetic counts must be positive with min <= max")
        if self.user_ability_spread < 0 or self.skill_difficulty_spread < 0:
            raise ValueError("spreads must be non-negative")


def synthesize_log(cfg: SynthConfig) -> InteractionLog:
    """Sample interactions from a logistic latent-trait model.

    Each student gets an ability, each skill a difficulty, and an attempt
    succeeds with probability ``sigmoid(ability - difficulty)``. Skills are
    drawn uniformly per attempt. Raw ids are offset so they are not already
    dense indices.
    """
    rng = np.random.default_rng(cfg.seed)
    ability = rng.normal(cfg.ability_mean, cfg.user_ability_spread, cfg.num_users)
    difficulty = rng.normal(0.0, cfg.skill_difficulty_spread, cfg.num_skills)
    lo, hi = cfg.interactions_per_user
    counts = rng.integers(lo, hi, size=cfg.num_users, endpoint=True)

    users = np.repeat(np.arange(cfg.num_users), counts)
    skills = rng.integers(0, cfg.num_skills, size=len(users))
    p = 1.0 / (1.0 + np.exp(-(ability[users] - difficulty[skills])))
    correct = (rng.random(len(users)) < p).astype(np.int8)
    return InteractionLog(users * 7 + 1000, skills * 3 + 100, correct, Source.SYNTHETIC)


def filter_active(
    log: InteractionLog, min_user_interactions: int = 50, min_skill_interactions: int = 100
) -> InteractionLog:
    """Drop sparse users then sparse skills, repeating until nothing changes."""
    if len(log) == 0:
        raise EmptyInput("cannot filter an empty log")
    keep = np.ones(len(log), dtype=bool)
    while True:
        before = keep.sum()
        _, inv, cnt = np.unique(log.user_id[keep], return_inverse=True, return_counts=True)
        keep[np.flatnonzero(keep)[cnt[inv] < min_user_interactions]] = False
        _, inv, cnt = np.unique(log.skill_id[keep], return_inverse=True, return_counts=True)
        keep[np.flatnonzero(keep)[cnt[inv] < min_skill_interactions]] = False
        if keep.sum() == before:
            break
    if not keep.any():
        raise EmptyAfterFilter(
            f"no interactions survive thresholds users>={min_user_interactions}, "
            f"skills>={min_skill_interactions}"
        )
    return log.subset(keep)


@dataclass
class IdMaps:
    user_ids: np.ndarray  # dense index -> raw id
    skill_ids: np.ndarray

    @property
    def user_map(self) -> dict[int, int]:
        return {int(raw): i for i, raw in enumerate(self.user_ids)}

    @property
    def skill_map(self) -> dict[int, int]:
        return {int(raw): i for i, raw in enumerate(self.skill_ids)}

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_skills(self) -> int:
        return len(self.skill_ids)

    def to_json(self) -> str:
        return json.dumps(
            {"user_ids": self.user_ids.tolist(), "skill_ids": self.skill_ids.tolist()}, indent=1
        )

    @classmethod
    def from_json(cls, text: str) -> IdMaps:
        d = json.loads(text)
        return cls(np.asarray(d["user_ids"], dtype=np.int64), np.asarray(d["skill_ids"], dtype=np.int64))


class StudentSkillExample(NamedTuple):
    user_idx: int
    skill_idx: int
    user_mean_correct: float
    user_interaction_count: float
    skill_mean_correct: float
    target_correct_rate: float
    label: int


@dataclass
class ExampleTable:
    """One row per (student, skill) pair, stored column-wise."""

    user_idx: np.ndarray
    skill_idx: np.ndarray
    user_mean_correct: np.ndarray
    user_interaction_count: np.ndarray
    skill_mean_correct: np.ndarray
    target_correct_rate: np.ndarray
    label: np.ndarray = field(default=None)

    def __post_init__(self):
        self.user_idx = np.asarray(self.user_idx, dtype=np.int64)
        self.skill_idx = np.asarray(self.skill_idx, dtype=np.int64)
        for name in CONTINUOUS_FEATURES + ("target_correct_rate",):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.label is None:
            self.label = label_from_rate(self.target_correct_rate)
        self.label = np.asarray(self.label, dtype=np.int8)
        n = len(self.user_idx)
        if any(len(getattr(self, c)) != n for c in EXAMPLE_COLUMNS):
            raise ValueError("example columns differ in length")

    def __len__(self) -> int:
        return len(self.user_idx)

    def __getitem__(self, idx) -> StudentSkillExample | ExampleTable:
        if isinstance(idx, (int, np.integer)):
            return StudentSkillExample(*(getattr(self, c)[idx].item() for c in EXAMPLE_COLUMNS))
        return ExampleTable(*(getattr(self, c)[idx] for c in EXAMPLE_COLUMNS))

    def __iter__(self) -> Iterator[StudentSkillExample]:
        return (self[i] for i in range(len(self)))

    @property
    def continuous(self) -> np.ndarray:
        """(n, 3) matrix of the continuous features."""
        return np.column_stack([getattr(self, c) for c in CONTINUOUS_FEATURES])

    def feature_matrix(self) -> np.ndarray:
        """(n, 5) matrix of ids and continuous features, for tree models."""
        return np.column_stack([getattr(self, c).astype(np.float64) for c in MODEL_FEATURES])

    @classmethod
    def concat(cls, tables: Sequence[ExampleTable]) -> ExampleTable:
        return cls(*(np.concatenate([getattr(t, c) for t in tables]) for c in EXAMPLE_COLUMNS))

    def replace(self, **columns) -> ExampleTable:
        cols = {c: getattr(self, c) for c in EXAMPLE_COLUMNS}
        cols.update(columns)
        return ExampleTable(**cols)

    def to_csv(self, path: str | Path, delimiter: str = ",") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(EXAMPLE_COLUMNS)
            for row in self:
                w.writerow(
                    [str(row.user_idx), str(row.skill_idx)]
                    + [repr(v) for v in row[2:6]]
                    + [str(row.label)]
                )

    @classmethod
    def from_csv(cls, path: str | Path, delimiter: str = ",") -> ExampleTable:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            header = next(reader, None)
            if header is None or tuple(header) != EXAMPLE_COLUMNS:
                raise MissingColumn(f"{path}: expected columns {','.join(EXAMPLE_COLUMNS)}")
            rows = list(reader)
        if not rows:
            raise EmptyInput(f"{path}: no examples")
        cols = list(zip(*rows))
        return cls(
            np.array(cols[0], dtype=np.int64),
            np.array(cols[1], dtype=np.int64),
            *(np.array(c, dtype=np.float64) for c in cols[2:6]),
            label=np.array(cols[6], dtype=np.int8),
        )


def label_from_rate(rate) -> np.ndarray:
    return (np.asarray(rate, dtype=np.float64) >= POSITIVE_RATE_THRESHOLD).astype(np.int8)


def _group_mean(keys: np.ndarray, values: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    count = np.bincount(keys, minlength=size)
    total = np.bincount(keys, weights=values, minlength=size)
    return total / count, count


def engineer_features(log: InteractionLog) -> tuple[ExampleTable, IdMaps]:
    """Build the unscaled (student, skill) example table and dense id maps.

    Dense indices follow ascending raw id. Rows are ordered by
    ``(user_idx, skill_idx)``.
    """
    if len(log) == 0:
        raise EmptyInput("cannot engineer features from an empty log")
    user_ids, u = np.unique(log.user_id, return_inverse=True)
    skill_ids, s = np.unique(log.skill_id, return_inverse=True)
    nu, ns = len(user_ids), len(skill_ids)
    y = log.correct.astype(np.float64)

    user_mean, user_count = _group_mean(u, y, nu)
    skill_mean, _ = _group_mean(s, y, ns)
    pair_key = u * ns + s
    pairs, pair_inv = np.unique(pair_key, return_inverse=True)
    pair_total = np.bincount(pair_inv, weights=y)
    pair_count = np.bincount(pair_inv)
    pu, ps = pairs // ns, pairs % ns

    table = ExampleTable(
        user_idx=pu,
        skill_idx=ps,
        user_mean_correct=user_mean[pu],
        user_interaction_count=user_count[pu].astype(np.float64),
        skill_mean_correct=skill_mean[ps],
        target_correct_rate=pair_total / pair_count,
    )
    return table, IdMaps(user_ids, skill_ids)


@dataclass
class MinMaxScaler:
    features: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, table: ExampleTable, features=CONTINUOUS_FEATURES) -> MinMaxScaler:
        if len(table) == 0:
            raise EmptyInput("cannot fit a scaler on no examples")
        cols = [getattr(table, f) for f in features]
        return cls(tuple(features), np.array([c.min() for c in cols]), np.array([c.max() for c in cols]))

    def _span(self) -> np.ndarray:
        return self.maxs - self.mins

    def transform(self, table: ExampleTable) -> ExampleTable:
        out = {}
        for f, lo, span in zip(self.features, self.mins, self._span()):
            x = getattr(table, f)
            # a constant feature carries no information; pin it to 0
            out[f] = (x - lo) / span if span > 0 else np.zeros_like(x)
        return table.replace(**out)

    def inverse_transform(self, table: ExampleTable) -> ExampleTable:
        out = {}
        for f, lo, span in zip(self.features, self.mins, self._span()):
            out[f] = getattr(table, f) * span + lo if span > 0 else np.full(len(table), lo)
        return table.replace(**out)

    def to_json(self) -> str:
        return json.dumps(
            {f: {"min": float(lo), "max": float(hi)} for f, lo, hi in zip(self.features, self.mins, self.maxs)},
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> MinMaxScaler:
        d = json.loads(text)
        feats = tuple(d)
        return cls(feats, np.array([d[f]["min"] for f in feats]), np.array([d[f]["max"] for f in feats]))


def minmax_scale(
    table: ExampleTable, features: Sequence[str] = CONTINUOUS_FEATURES
) -> tuple[ExampleTable, MinMaxScaler]:
    scaler = MinMaxScaler.fit(table, tuple(features))
    return scaler.transform(table), scaler


@dataclass
class ClientDataset:
    client_id: int
    train: ExampleTable
    test: ExampleTable


def _n_test(n: int, test_fraction: float) -> int:
    if n < 2:
        return 0
    # small epsilon guards against 0.2 * 10 evaluating to 2.0000000000000004
    return min(n - 1, max(1, math.ceil(n * test_fraction - 1e-9)))


def partition_by_user(
    table: ExampleTable, test_fraction: float = 0.2, seed: int = 0
) -> list[ClientDataset]:
    """One client per student, each with its own shuffled train/test split.

    The shuffle for client ``k`` is seeded from ``(seed, k)`` so a client's
    split does not depend on which other clients exist.
    """
    clients = []
    order = np.argsort(table.user_idx, kind="stable")
    users, starts = np.unique(table.user_idx[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    for user, lo, hi in zip(users.tolist(), starts.tolist(), bounds):
        idx = order[lo:hi]
        rng = np.random.default_rng([seed, user])
        idx = idx[rng.permutation(len(idx))]
        k = _n_test(len(idx), test_fraction)
        test_idx, train_idx = np.sort(idx[:k]), np.sort(idx[k:])
        clients.append(ClientDataset(user, table[train_idx], table[test_idx]))
    return clients


def central_split(
    table: ExampleTable, test_fraction: float = 0.2, seed: int = 0, stratify: bool = True
) -> tuple[ExampleTable, ExampleTable]:
    """Shuffled train/test split, stratified on the label when possible."""
    rng = np.random.default_rng(seed)
    labels = table.label
    if stratify and len(np.unique(labels)) < 2:
        warnings.warn(
            DegenerateLabelsWarning(
                f"only label {int(labels[0])} present; splitting without stratification"
            ),
            stacklevel=2,
        )
        stratify = False
    groups = [np.flatnonzero(labels == v) for v in (0, 1)] if stratify else [np.arange(len(table))]
    test_parts, train_parts = [], []
    for g in groups:
        g = g[rng.permutation(len(g))]
        k = int(round(len(g) * test_fraction))
        test_parts.append(g[:k])
        train_parts.append(g[k:])
    test_idx = np.sort(np.concatenate(test_parts))
    train_idx = np.sort(np.concatenate(train_parts))
    return table[train_idx], table[test_idx]


def require_both_labels(table: ExampleTable) -> None:
    if len(np.unique(table.label)) < 2:
        raise DegenerateLabels("training data contains a single label")


@dataclass
class PreparedData:
    examples: ExampleTable
    scaler: MinMaxScaler
    id_maps: IdMaps
    num_interactions: int

    @property
    def num_users(self) -> int:
        return self.id_maps.num_users

    @property
    def num_skills(self) -> int:
        return self.id_maps.num_skills

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.examples.to_csv(d / "examples.csv")
        (d / "scaler.json").write_text(self.scaler.to_json() + "\n", encoding="utf-8")
        (d / "id_maps.json").write_text(self.id_maps.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> PreparedData:
        d = Path(directory)
        examples = ExampleTable.from_csv(d / "examples.csv")
        return cls(
            examples,
            MinMaxScaler.from_json((d / "scaler.json").read_text(encoding="utf-8")),
            IdMaps.from_json((d / "id_maps.json").read_text(encoding="utf-8")),
            num_interactions=-1,
        )


def prepare(
    log: InteractionLog, min_user_interactions: int = 50, min_skill_interactions: int = 100
) -> PreparedData:
    """Run filtering, feature engineering and scaling end to end."""
    filtered = filter_active(log, min_user_interactions, min_skill_interactions)
    table, maps = engineer_features(filtered)
    scaled, scaler = minmax_scale(table)
    return PreparedData(scaled, scaler, maps, len(filtered))
