"""Second-order gradient-boosted trees for binary classification.

Each round fits a regression tree to the per-example gradient ``g = p - y``
and hessian ``h = p(1 - p)`` of the logistic loss. With regularized
objective ``gamma * T + lambda/2 * ||w||^2`` per tree, a leaf holding sums
``G, H`` gets weight ``-G / (H + lambda)`` and a split's gain is

    1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

Splits are found by exact greedy enumeration over midpoints of sorted
unique feature values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .data import MODEL_FEATURES, ExampleTable, require_both_labels
from .errors import DegenerateLabels, DegenerateLeaf, FeatureMismatch
from .metrics import ConfusionCounts, RoundMetrics
from .model import bce_loss

MAGIC = "GBDT01"


@dataclass(frozen=True)
class BoosterConfig:
    num_rounds: int = 100
    eta: float = 0.3
    gamma: float = 0.0
    reg_lambda: float = 1.0
    max_depth: int = 4
    min_child_hessian: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0 or self.reg_lambda < 0 or self.min_child_hessian < 0:
            raise ValueError("penalties must be non-negative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_rounds < 0 or not self.eta > 0:
            raise ValueError("num_rounds must be >= 0 and eta > 0")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TreeNode:
    """A split (``left``/``right`` set) or a leaf carrying ``weight``."""

    weight: float = 0.0
    feature: int = -1
    threshold: float = math.nan
    left: TreeNode | None = None
    right: TreeNode | None = None
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def num_leaves(self) -> int:
        return 1 if self.is_leaf else self.left.num_leaves() + self.right.num_leaves()

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        self._fill(X, np.arange(len(X)), out)
        return out

    def _fill(self, X, rows, out):
        if self.is_leaf:
            out[rows] = self.weight
            return
        go_left = X[rows, self.feature] < self.threshold
        self.left._fill(X, rows[go_left], out)
        self.right._fill(X, rows[~go_left], out)


class FeatureImportance(NamedTuple):
    names: tuple[str, ...]
    gain: np.ndarray

    def ranking(self) -> list[tuple[str, float]]:
        """Features by descending total gain; ties keep column order."""
        order = sorted(range(len(self.names)), key=lambda i: -self.gain[i])
        return [(self.names[i], float(self.gain[i])) for i in order]


@dataclass
class BoostedEnsemble:
    trees: list[TreeNode]
    base_score: float
    eta: float
    num_features: int

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.num_features:
            raise FeatureMismatch(f"expected {self.num_features} features, got shape {X.shape}")
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.eta * tree.predict(X)
        return out


def logistic_grad_hess(p, y):
    """Gradient and hessian of log loss with respect to the logit."""
    p = np.asarray(p, dtype=np.float64)
    return p - y, p * (1.0 - p)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    if not denom > 0:
        raise DegenerateLeaf(f"H + lambda = {denom} must be positive")
    return float(-G / denom)


def structure_score(G: float, H: float, reg_lambda: float) -> float:
    """Objective reduction of one leaf at its optimal weight: G^2 / (H + lambda)."""
    return G * G / (H + reg_lambda)


def split_gain(GL, HL, GR, HR, reg_lambda, gamma):
    return (
        0.5
        * (
            structure_score(GL, HL, reg_lambda)
            + structure_score(GR, HR, reg_lambda)
            - structure_score(GL + GR, HL + HR, reg_lambda)
        )
        - gamma
    )


def _best_split(X, g, h, cfg: BoosterConfig):
    """Highest-gain split over all features, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    G, H = g.sum(), h.sum()
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cut = np.flatnonzero(xs[1:] > xs[:-1])  # last row of each left block
        if cut.size == 0:
            continue
        GL = np.cumsum(g[order])[cut]
        HL = np.cumsum(h[order])[cut]
        GR, HR = G - GL, H - HL
        gain = split_gain(GL, HL, GR, HR, cfg.reg_lambda, cfg.gamma)
        ok = (HL >= cfg.min_child_hessian) & (HR >= cfg.min_child_hessian)
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > 0 and (best is None or gain[i] > best[0]):
            threshold = 0.5 * (xs[cut[i]] + xs[cut[i] + 1])
            best = (float(gain[i]), j, float(threshold))
    return best


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: BoosterConfig, depth: int = 0) -> TreeNode:
    """Greedy depth-first tree on ``(g, h)``; rows with ``x < threshold`` go left."""
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    node = TreeNode(weight=leaf_weight(g.sum(), h.sum(), cfg.reg_lambda))
    if depth >= cfg.max_depth or len(g) < 2:
        return node
    found = _best_split(X, g, h, cfg)
    if found is None:
        return node
    gain, j, threshold = found
    mask = X[:, j] < threshold
    node.feature, node.threshold, node.gain = j, threshold, gain
    node.left = build_tree(X[mask], g[mask], h[mask], cfg, depth + 1)
    node.right = build_tree(X[~mask], g[~mask], h[~mask], cfg, depth + 1)
    return node


def split_gains(tree: TreeNode) -> list[tuple[int, float]]:
    """(feature, gain) of every accepted split in pre-order."""
    if tree.is_leaf:
        return []
    return [(tree.feature, tree.gain)] + split_gains(tree.left) + split_gains(tree.right)


class TrainResult(NamedTuple):
    ensemble: BoostedEnsemble
    history: list[RoundMetrics]
    importance: FeatureImportance
    train_loss: list[float]


def _round_metrics(round_idx, margin, labels, threshold=0.5) -> RoundMetrics:
    p = expit(margin)
    counts = ConfusionCounts.from_probabilities(labels, p, threshold)
    return RoundMetrics.from_counts(round_idx, counts, bce_loss(p, labels), num_fit_clients=0)


def train(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_eval: np.ndarray,
    y_eval: np.ndarray,
    cfg: BoosterConfig = BoosterConfig(),
    feature_names: Sequence[str] | None = None,
) -> TrainResult:
    """Fit ``cfg.num_rounds`` trees, tracking eval metrics after every round.

    ``train_loss[0]`` is the log loss of the constant base-rate model and
    ``train_loss[t]`` the loss after round ``t``.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_eval = np.asarray(X_eval, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_eval = np.asarray(y_eval, dtype=np.float64)
    if X_eval.shape[1] != X_train.shape[1]:
        raise FeatureMismatch("train and eval feature counts differ")
    n_features = X_train.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(n_features))

    pos = y_train.mean()
    if pos <= 0.0 or pos >= 1.0:
        raise DegenerateLabels("training labels must contain both classes")
    base = math.log(pos / (1.0 - pos))
    ensemble = BoostedEnsemble([], base, cfg.eta, n_features)

    margin_tr = np.full(len(y_train), base)
    margin_ev = np.full(len(y_eval), base)
    importance = np.zeros(n_features)
    history = []
    train_loss = [bce_loss(expit(margin_tr), y_train)]
    for t in range(1, cfg.num_rounds + 1):
        g, h = logistic_grad_hess(expit(margin_tr), y_train)
        tree = build_tree(X_train, g, h, cfg)
        ensemble.trees.append(tree)
        for j, gain in split_gains(tree):
            importance[j] += gain
        margin_tr += cfg.eta * tree.predict(X_train)
        margin_ev += cfg.eta * tree.predict(X_eval)
        train_loss.append(bce_loss(expit(margin_tr), y_train))
        if len(y_eval):
            history.append(_round_metrics(t, margin_ev, y_eval))
    return TrainResult(ensemble, history, FeatureImportance(names, importance), train_loss)


def train_tables(train_set: ExampleTable, eval_set: ExampleTable, cfg: BoosterConfig = BoosterConfig()) -> TrainResult:
    require_both_labels(train_set)
    return train(
        train_set.feature_matrix(),
        train_set.label,
        eval_set.feature_matrix(),
        eval_set.label,
        cfg,
        MODEL_FEATURES,
    )


def predict(ensemble: BoostedEnsemble, X: np.ndarray, labels=None, threshold: float = 0.5):
    """Probabilities, plus confusion counts when labels are given."""
    p = expit(ensemble.margin(X))
    if labels is None:
        return p, None
    return p, ConfusionCounts.from_probabilities(labels, p, threshold)


def _dump_node(node: TreeNode, lines: list[str]) -> None:
    if node.is_leaf:
        lines.append(f"leaf {node.weight!r}")
        return
    lines.append(f"split {node.feature} {node.threshold!r} {node.weight!r} {node.gain!r}")
    _dump_node(node.left, lines)
    _dump_node(node.right, lines)


def dumps(ensemble: BoostedEnsemble) -> str:
    lines = [
        MAGIC,
        f"num_features {ensemble.num_features}",
        f"base_score {ensemble.base_score!r}",
        f"eta {ensemble.eta!r}",
        f"num_trees {len(ensemble.trees)}",
    ]
    for i, tree in enumerate(ensemble.trees):
        lines.append(f"tree {i}")
        _dump_node(tree, lines)
        lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text: str) -> BoostedEnsemble:
    lines = iter(text.splitlines())
    if next(lines, None) != MAGIC:
        raise ValueError("not a boosted-ensemble checkpoint")
    header = {}
    for _ in range(4):
        key, value = next(lines).split()
        header[key] = value

    def parse():
        parts = next(lines).split()
        if parts[0] == "leaf":
            return TreeNode(weight=float(parts[1]))
        node = TreeNode(
            weight=float(parts[3]), feature=int(parts[1]), threshold=float(parts[2]), gain=float(parts[4])
        )
        node.left = parse()
        node.right = parse()
        return node

    trees = []
    for _ in range(int(header["num_trees"])):
        if not next(lines).startswith("tree"):
            raise ValueError("malformed tree block")
        trees.append(parse())
        if next(lines) != "end":
            raise ValueError("malformed tree block")
    return BoostedEnsemble(trees, float(header["base_score"]), float(header["eta"]), int(header["num_features"]))


def save(ensemble: BoostedEnsemble, path: str | Path) -> None:
    Path(path).write_text(dumps(ensemble), encoding="utf-8")


def load(path: str | Path) -> BoostedEnsemble:
    return loads(Path(path).read_text(encoding="utf-8"))
