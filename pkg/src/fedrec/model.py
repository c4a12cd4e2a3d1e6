"""Embedding + MLP student-success model with hand-written backprop.

Architecture: user and skill embeddings are concatenated with the three
continuous features and passed through Dense-ReLU, Dense-ReLU and a single
sigmoid output unit.

All parameters live in one flat float64 buffer; the named tensors on
:class:`ModelParams` are reshaped views into it. That keeps optimizer steps,
aggregation and checkpointing vector operations.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import ClientDataset, ExampleTable
from .errors import (
    EmptyClient,
    EmptyDataset,
    IndexOutOfRange,
    LengthMismatch,
    ShapeMismatch,
)
from .metrics import ConfusionCounts

BCE_EPS = 1e-7
# strict (0, 1) bounds for sigmoid outputs in float64
_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)

TENSOR_ORDER = ("user_emb", "skill_emb", "w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class ModelDims:
    num_users: int
    num_skills: int
    embedding_dim: int = 10
    hidden1: int = 32
    hidden2: int = 16
    num_continuous: int = 3

    def __post_init__(self):
        if min(self.num_users, self.num_skills, self.embedding_dim, self.hidden1, self.hidden2) < 1:
            raise ValueError("model dimensions must be positive")
        if self.num_continuous < 0:
            raise ValueError("num_continuous must be non-negative")

    @property
    def concat_width(self) -> int:
        return 2 * self.embedding_dim + self.num_continuous

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "user_emb": (self.num_users, self.embedding_dim),
            "skill_emb": (self.num_skills, self.embedding_dim),
            "w1": (self.concat_width, self.hidden1),
            "b1": (self.hidden1,),
            "w2": (self.hidden1, self.hidden2),
            "b2": (self.hidden2,),
            "w3": (self.hidden2, 1),
            "b3": (1,),
        }

    @property
    def num_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.num_users,
            self.num_skills,
            self.embedding_dim,
            self.hidden1,
            self.hidden2,
            self.num_continuous,
        )


class ModelParams:
    """Named views over a flat parameter vector.

    Layout is the fixed row-major order ``user_emb, skill_emb, w1, b1, w2,
    b2, w3, b3``; dense weights are stored as (fan_in, fan_out).
    """

    def __init__(self, dims: ModelDims, flat: np.ndarray | None = None):
        self.dims = dims
        if flat is None:
            flat = np.zeros(dims.num_params)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.shape[0] != dims.num_params:
            raise LengthMismatch(f"expected {dims.num_params} values, got {flat.size}")
        self.flat = flat
        offset = 0
        for name, shape in dims.shapes().items():
            size = math.prod(shape)
            setattr(self, name, flat[offset : offset + size].reshape(shape))
            offset += size

    def copy(self) -> ModelParams:
        return ModelParams(self.dims, self.flat.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_ORDER}

    def check_congruent(self, other: ModelParams) -> None:
        if other.dims != self.dims:
            raise ShapeMismatch(f"dims {other.dims} do not match {self.dims}")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ModelParams)
            and self.dims == other.dims
            and np.array_equal(self.flat, other.flat)
        )

    def __repr__(self) -> str:
        return f"ModelParams({self.dims}, n={self.flat.size})"


# gradient containers share the parameter layout
Gradients = ModelParams


def flatten(params: ModelParams) -> np.ndarray:
    return params.flat.copy()


def unflatten(vector, dims: ModelDims) -> ModelParams:
    return ModelParams(dims, np.array(vector, dtype=np.float64))


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    """Small-uniform embeddings, Glorot-uniform dense weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = ModelParams(dims)
    p.user_emb[:] = rng.uniform(-0.05, 0.05, p.user_emb.shape)
    p.skill_emb[:] = rng.uniform(-0.05, 0.05, p.skill_emb.shape)
    for name in ("w1", "w2", "w3"):
        w = getattr(p, name)
        bound = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[:] = rng.uniform(-bound, bound, w.shape)
    return p


@dataclass
class Batch:
    user_idx: np.ndarray
    skill_idx: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.user_idx = np.asarray(self.user_idx, dtype=np.int64)
        self.skill_idx = np.asarray(self.skill_idx, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.user_idx), -1)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = len(self.user_idx)
        if n < 1 or len(self.skill_idx) != n or len(self.labels) != n:
            raise LengthMismatch("batch columns must share a positive length")

    def __len__(self) -> int:
        return len(self.user_idx)

    @classmethod
    def from_table(cls, table: ExampleTable, idx=None) -> Batch:
        if idx is not None:
            table = table[idx]
        return cls(table.user_idx, table.skill_idx, table.continuous, table.label)


def _check_indices(dims: ModelDims, batch: Batch) -> None:
    for name, idx, bound in (
        ("user", batch.user_idx, dims.num_users),
        ("skill", batch.skill_idx, dims.num_skills),
    ):
        if idx.min() < 0 or idx.max() >= bound:
            raise IndexOutOfRange(f"{name} index outside [0, {bound})")
    if batch.features.shape[1] != dims.num_continuous:
        raise ShapeMismatch(
            f"expected {dims.num_continuous} continuous features, got {batch.features.shape[1]}"
        )


def _forward(params: ModelParams, batch: Batch):
    _check_indices(params.dims, batch)
    x = np.concatenate(
        [params.user_emb[batch.user_idx], params.skill_emb[batch.skill_idx], batch.features], axis=1
    )
    z1 = x @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.maximum(z2, 0.0)
    logit = (a2 @ params.w3 + params.b3)[:, 0]
    return x, z1, a1, z2, a2, expit(logit)


def forward(params: ModelParams, batch: Batch) -> np.ndarray:
    """Success probabilities, one per batch row, strictly inside (0, 1)."""
    return np.clip(_forward(params, batch)[-1], _P_LO, _P_HI)


def bce_loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape[0] if p.ndim else 0} probabilities vs {y.size} labels")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def proximal_penalty(params: ModelParams, global_params: ModelParams, mu: float) -> float:
    d = params.flat - global_params.flat
    return 0.5 * mu * float(d @ d)


def backward(
    params: ModelParams,
    batch: Batch,
    mu: float = 0.0,
    global_params: ModelParams | None = None,
) -> tuple[float, Gradients]:
    """Loss and gradient of ``BCE + mu/2 * ||w - w_global||^2``.

    The proximal part spans every parameter, including embedding rows the
    batch does not touch.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if mu > 0:
        if global_params is None:
            raise ShapeMismatch("mu > 0 requires global_params")
        params.check_congruent(global_params)

    x, z1, a1, z2, a2, p = _forward(params, batch)
    y = batch.labels
    n = len(batch)
    loss = bce_loss(p, y)
    grads = ModelParams(params.dims)

    # sigmoid + BCE: d loss / d logit = (p - y) / n
    dlogit = ((p - y) / n)[:, None]
    grads.w3[:] = a2.T @ dlogit
    grads.b3[:] = dlogit.sum(axis=0)
    dz2 = (dlogit @ params.w3.T) * (z2 > 0)
    grads.w2[:] = a1.T @ dz2
    grads.b2[:] = dz2.sum(axis=0)
    dz1 = (dz2 @ params.w2.T) * (z1 > 0)
    grads.w1[:] = x.T @ dz1
    grads.b1[:] = dz1.sum(axis=0)
    dx = dz1 @ params.w1.T
    e = params.dims.embedding_dim
    np.add.at(grads.user_emb, batch.user_idx, dx[:, :e])
    np.add.at(grads.skill_emb, batch.skill_idx, dx[:, e : 2 * e])

    if mu > 0:
        grads.flat += mu * (params.flat - global_params.flat)
        loss += proximal_penalty(params, global_params, mu)
    return loss, grads


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(
    params: ModelParams, grads: Gradients, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One SGD or bias-corrected Adam update; inputs are left untouched."""
    params.check_congruent(grads)
    g = grads.flat
    t = state.step_count + 1
    if state.kind == "sgd":
        new = params.flat - state.learning_rate * g
        return ModelParams(params.dims, new), OptimizerState(
            "sgd", state.learning_rate, state.beta1, state.beta2, state.epsilon, t
        )

    m = np.zeros_like(g) if state.m is None else state.m
    v = np.zeros_like(g) if state.v is None else state.v
    if m.shape != g.shape or v.shape != g.shape:
        raise ShapeMismatch("optimizer moments do not match the parameters")
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params.flat - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return ModelParams(params.dims, new), OptimizerState(
        "adam", state.learning_rate, state.beta1, state.beta2, state.epsilon, t, m, v
    )


def train_local(
    global_params: ModelParams,
    client: ClientDataset,
    epochs: int = 5,
    batch_size: int = 32,
    lr: float = 0.001,
    mu: float = 0.0,
    seed: int = 0,
    optimizer: str = "adam",
) -> tuple[ModelParams, int]:
    """Fit a copy of the global model on one client's training rows.

    A fresh optimizer is created per call, as a client starting a round would.
    Returns the updated parameters and the number of training examples.
    """
    n = len(client.train)
    if n == 0:
        raise EmptyClient(f"client {client.client_id} has no training data")
    local = global_params.copy()
    if epochs <= 0:
        return local, n
    state = OptimizerState(optimizer, lr)
    rng = np.random.default_rng(seed)
    full = Batch.from_table(client.train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = Batch(full.user_idx[idx], full.skill_idx[idx], full.features[idx], full.labels[idx])
            _, grads = backward(local, batch, mu, global_params)
            local, state = optimizer_step(local, grads, state)
    return local, n


def predict_proba(params: ModelParams, examples: ExampleTable) -> np.ndarray:
    if len(examples) == 0:
        raise EmptyDataset("no examples to predict")
    return forward(params, Batch.from_table(examples))


def evaluate(
    params: ModelParams, examples: ExampleTable, threshold: float = 0.5
) -> tuple[float, ConfusionCounts]:
    """Mean BCE and confusion counts; ``p >= threshold`` predicts success."""
    probs = predict_proba(params, examples)
    return bce_loss(probs, examples.label), ConfusionCounts.from_probabilities(
        examples.label, probs, threshold
    )


MAGIC = b"FEDREC01"


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write magic, six uint64 dims, then the flat vector as little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<6Q", *params.dims.as_tuple()))
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    dims = ModelDims(*struct.unpack("<6Q", data[8:56]))
    flat = np.frombuffer(data[56:], dtype="<f8").astype(np.float64)
    return unflatten(flat, dims)
