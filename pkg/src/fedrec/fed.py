"""Federated simulation: client sampling, local training, weighted averaging.

FedAvg and FedProx share the server side entirely. The only difference is
the proximal coefficient ``mu`` handed to each client's local optimizer,
so a FedProx run with ``mu=0`` reproduces FedAvg bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import ClientDataset, ExampleTable
from .errors import EmptyInput, EmptyUpdates, NotEnoughClients, ShapeMismatch
from .metrics import ConfusionCounts, MetricSummary, RoundMetrics, f1_score, summarize_history
from .model import ModelDims, ModelParams, bce_loss, init_params, predict_proba, train_local

log = logging.getLogger(__name__)

FEDAVG = "fedavg"
FEDPROX = "fedprox"


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = FEDPROX
    mu: float = 0.5
    rounds: int = 100
    fraction_fit: float = 0.1
    min_fit_clients: int = 50
    local_epochs: int = 5
    learning_rate: float = 0.001
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.kind not in (FEDAVG, FEDPROX):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.kind == FEDAVG and self.mu != 0:
            raise ValueError("FedAvg has no proximal term; mu must be 0")
        if not 0 < self.fraction_fit <= 1:
            raise ValueError("fraction_fit must lie in (0, 1]")
        if self.rounds < 0 or self.local_epochs < 0 or self.min_fit_clients < 1 or self.batch_size < 1:
            raise ValueError("rounds/epochs must be >= 0, min_fit_clients and batch_size >= 1")

    @classmethod
    def fedavg(cls, **kw) -> StrategyConfig:
        return cls(kind=FEDAVG, mu=0.0, **kw)

    @classmethod
    def fedprox(cls, mu: float, **kw) -> StrategyConfig:
        return cls(kind=FEDPROX, mu=mu, **kw)

    @property
    def label(self) -> str:
        return "fedavg" if self.kind == FEDAVG else f"fedprox_mu{self.mu:g}"

    @property
    def display_name(self) -> str:
        return "FedAvg" if self.kind == FEDAVG else f"FedProx (mu={self.mu:g})"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClientUpdate:
    client_id: int
    params: ModelParams
    num_examples: int

    def __post_init__(self):
        if self.num_examples < 1:
            raise ValueError("an update must come from at least one example")


@dataclass
class RunHistory:
    config: StrategyConfig
    rounds: list[RoundMetrics] = field(default_factory=list)
    final_params: ModelParams | None = None

    @property
    def summary(self) -> MetricSummary | None:
        """F1 summary, or None for a run with no rounds."""
        return summarize_history(self.rounds) if self.rounds else None

    @property
    def client_f1_summary(self) -> MetricSummary | None:
        if not self.rounds or self.rounds[0].f1_client_weighted is None:
            return None
        return summarize_history(self.rounds, "f1_client_weighted")


def sample_size(num_clients: int, fraction_fit: float, min_fit_clients: int) -> int:
    # epsilon keeps products like 0.2 * 50 from rounding up to 11
    return min(num_clients, max(math.ceil(fraction_fit * num_clients - 1e-9), min_fit_clients))


def select_clients(
    clients: Sequence[ClientDataset],
    fraction_fit: float,
    min_fit_clients: int,
    rng: np.random.Generator,
) -> list[ClientDataset]:
    """Uniform sample without replacement among clients that can train.

    The result is ordered by client id.
    """
    if not clients:
        raise EmptyInput("no clients to select from")
    eligible = sorted((c for c in clients if len(c.train) > 0), key=lambda c: c.client_id)
    if len(eligible) < min_fit_clients:
        raise NotEnoughClients(
            f"{len(eligible)} trainable clients but min_fit_clients={min_fit_clients}; "
            "lower min_fit_clients"
        )
    k = sample_size(len(eligible), fraction_fit, min_fit_clients)
    picked = np.sort(rng.choice(len(eligible), size=k, replace=False))
    return [eligible[i] for i in picked]


def aggregate(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-weighted mean ``sum_k n_k / N * w_k`` of client parameters.

    Updates are summed in client-id order so the result does not depend on
    arrival order. The sum is taken as offsets from the first update, which
    makes averaging identical models exact, and is clipped into the
    per-coordinate hull of the inputs to absorb last-ulp rounding.
    """
    if not updates:
        raise EmptyUpdates("nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    dims = ordered[0].params.dims
    for u in ordered[1:]:
        if u.params.dims != dims:
            raise ShapeMismatch(f"client {u.client_id} sent parameters of dims {u.params.dims}")
    total = sum(u.num_examples for u in ordered)
    anchor = ordered[0].params.flat
    acc = np.zeros_like(anchor)
    lo, hi = anchor.copy(), anchor.copy()
    for u in ordered[1:]:
        w = u.params.flat
        acc += (u.num_examples / total) * (w - anchor)
        np.minimum(lo, w, out=lo)
        np.maximum(hi, w, out=hi)
    return ModelParams(dims, np.clip(anchor + acc, lo, hi))


def weighted_metric(values: Sequence[tuple[float, float]]) -> float:
    if not values:
        raise EmptyInput("no metrics to average")
    weights = np.array([w for _, w in values], dtype=np.float64)
    if (weights <= 0).any():
        raise ValueError("weights must be positive")
    metrics = np.array([m for m, _ in values], dtype=np.float64)
    return float(metrics @ weights / weights.sum())


@dataclass
class EvalPool:
    """All non-empty client test sets stacked for one-pass evaluation."""

    examples: ExampleTable
    owner: np.ndarray  # position of each row's client in `client_ids`
    client_ids: list[int]

    @classmethod
    def build(cls, clients: Sequence[ClientDataset]) -> EvalPool | None:
        evaluating = sorted((c for c in clients if len(c.test) > 0), key=lambda c: c.client_id)
        if not evaluating:
            return None
        owner = np.repeat(np.arange(len(evaluating)), [len(c.test) for c in evaluating])
        return cls(ExampleTable.concat([c.test for c in evaluating]), owner, [c.client_id for c in evaluating])


def evaluate_clients(
    params: ModelParams, pool: EvalPool, threshold: float = 0.5
) -> tuple[float, ConfusionCounts, float, list[ConfusionCounts]]:
    """Pooled loss and counts plus the test-size-weighted mean client F1."""
    probs = predict_proba(params, pool.examples)
    y = pool.examples.label.astype(bool)
    pred = probs >= threshold
    k = len(pool.client_ids)
    per_client = [
        ConfusionCounts(int(tp), int(fp), int(fn), int(tn))
        for tp, fp, fn, tn in zip(
            np.bincount(pool.owner[y & pred], minlength=k),
            np.bincount(pool.owner[~y & pred], minlength=k),
            np.bincount(pool.owner[y & ~pred], minlength=k),
            np.bincount(pool.owner[~y & ~pred], minlength=k),
        )
    ]
    total = ConfusionCounts()
    for c in per_client:
        total = total + c
    client_f1 = weighted_metric([(f1_score(c), c.total) for c in per_client])
    return bce_loss(probs, y), total, client_f1, per_client


def client_seed(seed: int, round_idx: int, client_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, round_idx, client_id])


def run_round(
    global_params: ModelParams,
    clients: Sequence[ClientDataset],
    cfg: StrategyConfig,
    round_idx: int,
    pool: EvalPool | None = None,
) -> tuple[ModelParams, RoundMetrics | None]:
    """Select, broadcast, train locally, aggregate, then evaluate the result.

    Metrics are None only when no client holds test data.
    """
    rng = np.random.default_rng([cfg.seed, round_idx])
    selected = select_clients(clients, cfg.fraction_fit, cfg.min_fit_clients, rng)
    updates = []
    for c in selected:
        local, n = train_local(
            global_params,
            c,
            epochs=cfg.local_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.learning_rate,
            mu=cfg.mu,
            seed=client_seed(cfg.seed, round_idx, c.client_id),
            optimizer=cfg.optimizer,
        )
        updates.append(ClientUpdate(c.client_id, local, n))
    new_global = aggregate(updates)

    if pool is None:
        pool = EvalPool.build(clients)
    if pool is None:
        return new_global, None
    loss, counts, client_f1, _ = evaluate_clients(new_global, pool)
    return new_global, RoundMetrics.from_counts(round_idx, counts, loss, len(selected), client_f1)


def dims_for(clients: Sequence[ClientDataset], **kw) -> ModelDims:
    users = skills = 0
    for c in clients:
        for t in (c.train, c.test):
            if len(t):
                users = max(users, int(t.user_idx.max()) + 1)
                skills = max(skills, int(t.skill_idx.max()) + 1)
    return ModelDims(users, skills, **kw)


def run_simulation(
    clients: Sequence[ClientDataset],
    cfg: StrategyConfig,
    dims: ModelDims | None = None,
    on_round: Callable[[RoundMetrics], None] | None = None,
) -> RunHistory:
    """Run ``cfg.rounds`` rounds from a seeded initial model.

    ``on_round`` is called after each round, e.g. to stream history to disk.
    """
    dims = dims or dims_for(clients)
    params = init_params(dims, cfg.seed)
    history = RunHistory(cfg)
    pool = EvalPool.build(clients)
    for t in range(1, cfg.rounds + 1):
        params, metrics = run_round(params, clients, cfg, t, pool)
        if metrics is not None:
            history.rounds.append(metrics)
            if on_round is not None:
                on_round(metrics)
            log.debug("%s round %d f1=%.4f", cfg.label, t, metrics.f1)
    history.final_params = params
    return history
